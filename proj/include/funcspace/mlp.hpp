#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "funcspace/tensor.hpp"

namespace funcspace::net {

// Activation family of an MLP. The hidden/output pairing is fixed:
// sigmoid-based nets use a linear output layer, leaky-relu-based and
// linear-based nets use a sigmoid output layer.
enum class Activation { kSigmoid, kLeakyRelu, kLinear };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);

// Negative slope of the leaky-relu hidden activation.
inline constexpr double kMlpLeakySlope = 0.01;

// One sparse MLP without bias terms.
//
// weights[k] maps layer k to layer k+1; entry (a, b) is the weight from
// neuron a to neuron b. masks[k][j] gates neuron j of hidden layer k. Each
// mask vector has n_max entries; slots at or beyond the layer's size must be
// zero. Hard specs carry exact {0,1} gates; decoded soft specs keep the
// continuous values.
struct MlpSpec {
  Activation activation = Activation::kSigmoid;
  int input_dim = 0;
  int output_dim = 0;
  std::vector<int> hidden;
  std::vector<diff::Tensor> weights;
  std::vector<std::vector<double>> masks;

  int depth() const { return static_cast<int>(hidden.size()); }
  int n_max() const {
    return masks.empty() ? 0 : static_cast<int>(masks.front().size());
  }
};

// Column count of the padded matrix encoding for a given depth.
inline std::size_t matrix_cols(int depth, int n_max) {
  return static_cast<std::size_t>(depth + 1) * n_max + depth;
}

// Padded 2-D encoding: depth+1 weight blocks of n_max x n_max columns,
// then depth activity-mask columns.
struct MlpMatrix {
  int n_max = 0;
  diff::Tensor values;  // [n_max, matrix_cols(depth, n_max)]

  int depth() const {
    return static_cast<int>((values.dim(1) - n_max) / (n_max + 1));
  }
};

// Everything from_matrix needs beyond the raw values.
struct MatrixMeta {
  Activation activation = Activation::kSigmoid;
  int input_dim = 0;
  int output_dim = 0;
  int depth = 0;
  int n_max = 0;
};

// Throws ConfigError when a structural invariant is broken.
void check_valid(const MlpSpec& spec);

// Masked forward pass: hidden activations are multiplied by their gates, so
// inactive neurons contribute exactly zero downstream.
std::vector<double> mlp_forward(const MlpSpec& spec,
                                std::span<const double> x);

// Forward over a batch of rows: X is [N, input_dim], result [N, output_dim].
diff::Tensor mlp_forward_batch(const MlpSpec& spec, const diff::Tensor& X);

// Pre-output-activation value of the final layer (the linear part for
// sigmoid-output nets).
std::vector<double> mlp_forward_raw(const MlpSpec& spec,
                                    std::span<const double> x);

// Encodes into the padded matrix. Requires depth <= l_max and all of
// input_dim, output_dim and hidden sizes <= n_max, with spec.masks already
// sized n_max. Mask values are written verbatim.
MlpMatrix to_matrix(const MlpSpec& spec, int l_max, int n_max);

// Decodes a matrix. Mask columns are read as post-sigmoid values. With
// soft=false a neuron is active iff its value is strictly greater than 0.5,
// gates become exact {0,1} and weights adjacent to inactive neurons are
// zeroed. With soft=true the continuous gate values are kept. Hidden layers
// of the decoded spec all have n_max slots.
MlpSpec from_matrix(const MlpMatrix& m, const MatrixMeta& meta, bool soft);

// Zeros every weight into or out of an inactive neuron (gate <= 0.5).
// Idempotent; gate values themselves are untouched.
MlpSpec apply_mask(MlpSpec spec);

// Exact count of non-zero weight entries.
std::size_t non_zero_count(const MlpSpec& spec);

// Sets every weight with |w| < t to exactly zero, then applies the mask.
MlpSpec prune(MlpSpec spec, double t);

bool spec_equal(const MlpSpec& a, const MlpSpec& b);

// True when every input index reaches some output index through non-zero
// weights of active neurons.
bool all_inputs_reach_output(const MlpSpec& spec);

}  // namespace funcspace::net
