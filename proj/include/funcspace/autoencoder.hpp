#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "funcspace/generate.hpp"
#include "funcspace/mlp.hpp"
#include "funcspace/tape.hpp"

namespace funcspace::ae {

// Shapes of the multi-scale encoder-decoder.
//
// One encoder and one decoder per hidden-layer depth 1..l_max. Each encoder
// is 7 same-padding 3x3 convolutions over the padded network matrix treated
// as a 1-channel image (channel schedule 1 -> channels[0..6]), flattened.
// Encoders behave as a multiplexer: only the stack matching the input depth
// runs, the other segments are zero. The concatenated segments pass through
// 4 fully connected layers down to the d_z-dimensional embedding. The
// decoder mirrors this: 4 fully connected layers expand z, the result is
// split into one sub-vector per depth, and each decoder applies 7 transposed
// convolutions back to matrix shape, with a sigmoid over the mask columns.
struct ArchConfig {
  net::Activation activation = net::Activation::kSigmoid;
  int input_dim = 3;
  int output_dim = 1;
  int n_max = 7;
  int l_max = 4;
  int d_z = 64;
  std::vector<int> trunk_widths = {256, 128, 64};
  std::vector<int> channels = {8, 16, 32, 32, 32, 32, 32};
  double leaky_slope = 0.01;
  // Scale applied to the weight blocks of encoder inputs; 0 picks
  // 1 / (generator weight range for the activation kind).
  double input_scale = 0.0;

  double effective_input_scale() const {
    if (input_scale > 0.0) return input_scale;
    return activation == net::Activation::kSigmoid ? 0.1 : 1.0 / 3.0;
  }
  std::size_t flat_size(int depth) const {
    return static_cast<std::size_t>(channels.back()) * n_max *
           net::matrix_cols(depth, n_max);
  }
  std::size_t trunk_input_size() const {
    std::size_t total = 0;
    for (int l = 1; l <= l_max; ++l) total += flat_size(l);
    return total;
  }
};

void check_valid(const ArchConfig& arch);

// Per-dimension statistics of the embedding over a training corpus.
struct EmbeddingStats {
  std::vector<double> mean;
  std::vector<double> stdev;
  bool present() const { return !mean.empty(); }
};

// All trainable tensors plus the embedding statistics.
struct AutoencoderParams {
  ArchConfig arch;
  std::vector<std::vector<diff::Tensor>> enc_convs;  // [l_max][7]
  std::vector<diff::Tensor> enc_trunk;               // 4
  std::vector<diff::Tensor> dec_trunk;               // 4
  std::vector<std::vector<diff::Tensor>> dec_convs;  // [l_max][7]
  EmbeddingStats stats;

  // Canonical tensor enumeration shared by checkpoints, gradient
  // accumulation and the optimizer.
  std::vector<std::pair<std::string, diff::Tensor*>> tensor_entries();
  std::vector<std::pair<std::string, const diff::Tensor*>> tensor_entries()
      const;
  std::size_t parameter_count() const;
};

AutoencoderParams init_params(const ArchConfig& arch, std::uint64_t seed);

// Binds parameter tensors into one tape, each at most once. With sinks the
// leaves are trainable and gradients accumulate into sinks[entry]; without,
// parameters are frozen (no gradients computed for them).
class Binder {
 public:
  Binder(diff::Tape& tape, const AutoencoderParams& params,
         std::vector<diff::Tensor>* sinks = nullptr);

  diff::Var enc_conv(int depth, int layer);
  diff::Var enc_trunk(int i);
  diff::Var dec_trunk(int i);
  diff::Var dec_conv(int depth, int layer);

  diff::Tape& tape;
  const AutoencoderParams& params;

 private:
  diff::Var bind(std::size_t entry, const diff::Tensor* tensor);
  std::vector<diff::Var> cache_;
  std::vector<diff::Tensor>* sinks_;
};

// The soft-decoded matrix of one depth, kept as separate weight and gate
// parts (gates already sigmoided).
struct DecodedVar {
  int depth = 0;
  diff::Var weights;  // [n_max, (depth+1)*n_max]
  diff::Var gates;    // [n_max, depth]
};

// to_matrix with the encoder input scaling applied to the weight blocks
// (mask columns stay 0/1).
diff::Tensor encoder_input(const ArchConfig& arch, const net::MlpSpec& spec);

// Multiplexed encode of a prepared input matrix; returns the z node.
diff::Var build_encoder(Binder& b, diff::Var matrix, int depth);

// Trunk expansion, switch split and all (or one) decoder stacks.
std::vector<DecodedVar> build_decoder(Binder& b, diff::Var z);
DecodedVar build_decoder_single(Binder& b, diff::Var z, int depth);

// Differentiable evaluation of a soft-decoded network on inputs X [N, i];
// hidden activations are gated by the decoded mask columns.
diff::Var build_soft_predict(Binder& b, const DecodedVar& d, diff::Var X);

// All real weight entries of the decoded network (padding rows/columns
// excluded), gated by the adjacent soft masks, as one flat vector.
diff::Var build_gated_weights(Binder& b, const DecodedVar& d);

// Assembles the decoded matrix (sigmoided gate columns appended) from node
// values.
net::MlpMatrix materialize_matrix(const ArchConfig& arch, const DecodedVar& d);

// --- Plain (non-differentiating) entry points ---------------------------------

std::vector<double> encode(const AutoencoderParams& params,
                           const net::MlpSpec& spec);

std::vector<net::MlpSpec> decode_all(const AutoencoderParams& params,
                                     std::span<const double> z, bool soft);

// Per-decoder squared-error sums sum_x (N(x) - D_i(E(N))(x))^2 under soft
// decoding; the building block of both training losses.
std::vector<double> decoder_sq_errors(const AutoencoderParams& params,
                                      const net::MlpSpec& spec,
                                      const diff::Tensor& X,
                                      const diff::Tensor& Y);

}  // namespace funcspace::ae
