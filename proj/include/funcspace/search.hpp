#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "funcspace/autoencoder.hpp"
#include "funcspace/generate.hpp"
#include "funcspace/random.hpp"

namespace funcspace::emb {

// The soft weight-count surrogate comes in two shapes: the per-element form
// 0.5 * sum_j sigma(10 (|w_j| - t)), which counts weights above the
// threshold and decreases in t, and the aggregate form
// 0.5 * sigma(10 * sum_j |w_j - t|), kept as a compatibility switch.
enum class SoftCountForm { kPerElement, kAggregate };

struct SearchConfig {
  int iterations = 5000;
  double lr_z = 1e-2;
  double lr_t = 1e-3;
  double alpha = 0.0;
  int minibatch = 256;  // 0 runs full-batch over the train split
  std::vector<int> decoders;  // empty selects all decoders
  int restarts = 1;
  std::uint64_t seed = 0;
  SoftCountForm softcount = SoftCountForm::kPerElement;
  // Record the soft validation data loss every val_interval iterations
  // (0 records none; the final validation MPE is always computed).
  int val_interval = 0;
};

void check_valid(const SearchConfig& cfg, const ae::ArchConfig& arch);

// Outcome of the best restart for one decoder.
struct DecoderResult {
  int decoder = 0;
  int restart = 0;
  net::MlpSpec spec;  // hard-decoded and pruned with the final threshold
  double val_mpe = 0.0;
  double test_mpe = 0.0;
  std::size_t non_zero = 0;
  double final_t = 0.0;
  std::vector<double> z;
  std::vector<double> train_loss;   // one entry per iteration
  std::vector<double> t_history;    // threshold after each iteration
  std::vector<std::pair<int, double>> val_loss;  // (iteration, data loss)
  bool diverged = false;
};

struct SearchResult {
  std::vector<DecoderResult> per_decoder;  // ascending decoder index
};

// z = mean + std ⊙ standard-normal draw from the stored corpus statistics.
std::vector<double> sample_embedding(const ae::AutoencoderParams& params,
                                     util::Rng& rng);

double soft_count(std::span<const double> w, double t);
double soft_count_aggregate(std::span<const double> w, double t);

// alpha * (0.1 * |w|_1 + SoftCount(w, t))
double sparsity_penalty(std::span<const double> w, double t, double alpha,
                        SoftCountForm form = SoftCountForm::kPerElement);

// The same penalty as a tape graph over a flat weight vector and scalar
// threshold node; mirrors the plain helpers exactly.
diff::Var build_sparsity_penalty(diff::Tape& tape, diff::Var weights,
                                 diff::Var t, double alpha,
                                 SoftCountForm form);

// Squared-error sum of decoder `decoder` at embedding z over (X, Y) plus the
// sparsity penalty at threshold t. With alpha == 0 this is the bare data
// term. Plain evaluation of the objective the search descends.
double search_loss(const ae::AutoencoderParams& params,
                   std::span<const double> z, double t, int decoder,
                   const diff::Tensor& X, const diff::Tensor& Y, double alpha,
                   SoftCountForm form = SoftCountForm::kPerElement);

// Gradient descent in the embedding space, independently per decoder and
// restart: z steps against the full loss, t against the sparsity term only,
// projected to t >= 0. Restarts are ranked by validation MPE of the pruned
// network. Deterministic for a fixed (seed, config, dataset, checkpoint)
// regardless of worker count.
SearchResult search_optimal(const ae::AutoencoderParams& params,
                            const gen::FunctionalDataset& data,
                            const SearchConfig& cfg);

struct TradeoffPoint {
  double alpha = 0.0;
  std::size_t non_zero = 0;
  double mpe = 0.0;
};

struct TradeoffCurve {
  int decoder = 0;
  std::vector<TradeoffPoint> points;
};

// One search per alpha (strictly increasing list) with a shared seed.
TradeoffCurve tradeoff_scan(const ae::AutoencoderParams& params,
                            const gen::FunctionalDataset& data, int decoder,
                            std::span<const double> alphas,
                            const SearchConfig& base);

// MPE on the test split of always predicting the per-dimension median of the
// train outputs; the floor any useful search result must beat.
double constant_predictor_mpe(const gen::FunctionalDataset& data,
                              double eps = 1e-8);

}  // namespace funcspace::emb
