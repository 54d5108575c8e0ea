#include "funcspace/metrics.hpp"

#include <cmath>

#include "funcspace/errors.hpp"
#include "funcspace/mathx.hpp"
#include "funcspace/parallel.hpp"

namespace funcspace::ae {

double mpe(std::span<const double> preds, std::span<const double> truths,
           double eps) {
  if (preds.empty() || preds.size() != truths.size()) {
    throw ConfigError("mpe: inputs must be non-empty and equally sized");
  }
  if (eps <= 0.0) throw ConfigError("mpe: eps must be positive");
  std::vector<double> ratios(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    ratios[i] = std::fabs(truths[i] - preds[i]) / (std::fabs(truths[i]) + eps);
  }
  return median(std::move(ratios));
}

double mpe(const diff::Tensor& preds, const diff::Tensor& truths, double eps) {
  return mpe(preds.data(), truths.data(), eps);
}

double aggregate_min(std::span<const double> a) {
  if (a.empty()) throw ConfigError("aggregate_min: empty input");
  double best = a[0];
  for (double v : a) best = std::min(best, v);
  return best;
}

double aggregate_p(std::span<const double> a, double p) {
  if (a.empty()) throw ConfigError("aggregate_p: empty input");
  if (p == 0.0) throw ConfigError("aggregate_p: p must be non-zero");
  double acc = 0.0;
  for (double v : a) {
    // floor keeps zero errors inside the pow domain for p < 1; mirrors the
    // differentiable route exactly
    acc += std::pow(p < 1.0 ? v + 1e-12 : v, p);
  }
  return std::pow(acc, 1.0 / p);
}

namespace {

// Hard-decoded per-decoder MPE values for one corpus item.
std::vector<double> item_decoder_mpes(const AutoencoderParams& params,
                                      const gen::CorpusItem& item,
                                      const diff::Tensor& grid) {
  const std::vector<double> z = encode(params, item.spec);
  const std::vector<net::MlpSpec> decoded = decode_all(params, z, false);
  std::vector<double> out;
  out.reserve(decoded.size());
  for (const net::MlpSpec& d : decoded) {
    out.push_back(mpe(net::mlp_forward_batch(d, grid), item.outputs));
  }
  return out;
}

}  // namespace

MpeGrid eval_mpe_grid(const AutoencoderParams& params,
                      const std::vector<std::vector<gen::CorpusItem>>&
                          corpora_by_depth,
                      const diff::Tensor& grid) {
  const int l_max = params.arch.l_max;
  if (corpora_by_depth.size() != static_cast<std::size_t>(l_max)) {
    throw ConfigError("eval_mpe_grid: need one corpus per encoder depth");
  }
  MpeGrid table;
  table.l_max = l_max;
  table.cells.assign(l_max, std::vector<double>(l_max, 0.0));

  for (int depth = 1; depth <= l_max; ++depth) {
    const auto& items = corpora_by_depth[depth - 1];
    if (items.empty()) {
      throw ConfigError("eval_mpe_grid: empty corpus for depth " +
                        std::to_string(depth));
    }
    std::vector<std::vector<double>> per_item(items.size());
    util::parallel_for(items.size(), [&](std::size_t i) {
      per_item[i] = item_decoder_mpes(params, items[i], grid);
    });
    for (int dec = 0; dec < l_max; ++dec) {
      std::vector<double> column(items.size());
      for (std::size_t i = 0; i < items.size(); ++i) {
        column[i] = per_item[i][dec];
      }
      table.cells[dec][depth - 1] = median(std::move(column));
    }
  }
  return table;
}

std::vector<double> best_decoder_mpes(const AutoencoderParams& params,
                                      const gen::Corpus& corpus) {
  std::vector<double> out(corpus.items.size());
  util::parallel_for(corpus.items.size(), [&](std::size_t i) {
    const auto mpes = item_decoder_mpes(params, corpus.items[i], corpus.grid);
    out[i] = aggregate_min(mpes);
  });
  return out;
}

std::vector<SurfaceRow> export_surface(const net::MlpSpec& a,
                                       const net::MlpSpec& b, int fix_dim,
                                       double fix_value, int grid_n) {
  if (a.input_dim != b.input_dim || a.output_dim != b.output_dim) {
    throw ConfigError("export_surface: networks disagree on dimensions");
  }
  if (a.input_dim != 3 || a.output_dim != 1) {
    throw ConfigError("export_surface: needs 3-input, 1-output networks");
  }
  if (fix_dim < 0 || fix_dim >= 3) {
    throw ConfigError("export_surface: fixed dimension out of range");
  }
  if (grid_n < 2) throw ConfigError("export_surface: grid must be >= 2");

  std::vector<int> free_dims;
  for (int d = 0; d < 3; ++d) {
    if (d != fix_dim) free_dims.push_back(d);
  }
  const double step = 2.0 / (grid_n - 1);
  std::vector<SurfaceRow> rows;
  rows.reserve(static_cast<std::size_t>(grid_n) * grid_n);
  std::vector<double> x(3, fix_value);
  for (int i = 0; i < grid_n; ++i) {
    for (int j = 0; j < grid_n; ++j) {
      SurfaceRow row;
      row.x1 = i + 1 == grid_n ? 1.0 : -1.0 + step * i;
      row.x2 = j + 1 == grid_n ? 1.0 : -1.0 + step * j;
      x[free_dims[0]] = row.x1;
      x[free_dims[1]] = row.x2;
      x[fix_dim] = fix_value;
      row.ya = net::mlp_forward(a, x)[0];
      row.yb = net::mlp_forward(b, x)[0];
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace funcspace::ae
