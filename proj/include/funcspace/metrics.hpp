#pragma once

#include <span>
#include <vector>

#include "funcspace/autoencoder.hpp"
#include "funcspace/generate.hpp"

namespace funcspace::ae {

// Median Percentage Error: median over scalar components of
// |truth - pred| / (|truth| + eps).
double mpe(std::span<const double> preds, std::span<const double> truths,
           double eps = 1e-8);
double mpe(const diff::Tensor& preds, const diff::Tensor& truths,
           double eps = 1e-8);

// Loss aggregation over per-decoder squared-error sums. For negative p the
// values get a 1e-12 additive floor so zero errors stay in the pow domain.
double aggregate_min(std::span<const double> a);
double aggregate_p(std::span<const double> a, double p);

// Table of median MPE values per (decoder, encoder-depth) cell, computed
// with hard-thresholded decoding.
struct MpeGrid {
  int l_max = 0;
  // cells[decoder-1][encoder_depth-1]
  std::vector<std::vector<double>> cells;
};

MpeGrid eval_mpe_grid(const AutoencoderParams& params,
                      const std::vector<std::vector<gen::CorpusItem>>&
                          corpora_by_depth,
                      const diff::Tensor& grid);

// Best-decoder MPE for every corpus item (hard decoding), in item order.
std::vector<double> best_decoder_mpes(const AutoencoderParams& params,
                                      const gen::Corpus& corpus);

// Two-network output sweep over the two free input dimensions with one
// dimension held fixed; both networks must be 3-input, 1-output.
struct SurfaceRow {
  double x1 = 0.0, x2 = 0.0, ya = 0.0, yb = 0.0;
};
std::vector<SurfaceRow> export_surface(const net::MlpSpec& a,
                                       const net::MlpSpec& b, int fix_dim,
                                       double fix_value, int grid_n);

}  // namespace funcspace::ae
