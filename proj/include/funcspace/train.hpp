#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "funcspace/autoencoder.hpp"
#include "funcspace/generate.hpp"

namespace funcspace::ae {

// Which functional reconstruction loss to train against: the per-network
// minimum over decoders, or the p-norm aggregate over decoders.
struct LossSpec {
  enum class Kind { kMin, kPNorm };
  Kind kind = Kind::kMin;
  double p = 2.0;

  static LossSpec min_loss() { return {}; }
  static LossSpec p_norm(double p);
  // "min" or "p:<float>"
  static LossSpec parse(const std::string& text);
  std::string str() const;
};

struct TrainConfig {
  int batch = 32;
  int epochs = 4;
  double lr = 1e-3;
  LossSpec loss;
  std::uint64_t seed = 0;
};

void check_valid(const TrainConfig& cfg);

struct TrainLog {
  std::vector<double> epoch_mean_loss;
  int epochs_completed = 0;
  bool diverged = false;
};

using EpochCallback =
    std::function<void(int epoch, double mean_loss, const AutoencoderParams&)>;

// Batched adaptive-moment gradient descent of all encoder/decoder parameters
// against the chosen functional loss. Batches are shuffled per epoch from the
// seed; gradient reduction is windowed in sample order, so results do not
// depend on the worker count. On divergence (any non-finite value), the
// parameters roll back to the last completed epoch and the log is flagged.
// After a successful run, embedding statistics over the corpus are stored in
// params.
TrainLog train_autoencoder(const TrainConfig& cfg, const gen::Corpus& corpus,
                           AutoencoderParams& params,
                           const EpochCallback& on_epoch = {});

EmbeddingStats compute_embedding_stats(const AutoencoderParams& params,
                                       const gen::Corpus& corpus);

// Loss of the given corpus items at fixed parameters; the non-differentiating
// mirror of the training objective.
double batch_loss(const AutoencoderParams& params, const gen::Corpus& corpus,
                  std::span<const std::size_t> indices, const LossSpec& loss);

}  // namespace funcspace::ae
