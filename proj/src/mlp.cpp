#include "funcspace/mlp.hpp"

#include <cmath>
#include <cstring>
#include <deque>

#include "funcspace/errors.hpp"
#include "funcspace/mathx.hpp"

namespace funcspace::net {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kLeakyRelu: return "leaky_relu";
    case Activation::kLinear: return "linear";
  }
  return "?";
}

Activation parse_activation(const std::string& name) {
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "leaky_relu") return Activation::kLeakyRelu;
  if (name == "linear") return Activation::kLinear;
  throw ConfigError("unknown activation '" + name +
                    "' (expected sigmoid, leaky_relu or linear)");
}

namespace {

double hidden_act(Activation a, double x) {
  switch (a) {
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kLeakyRelu: return leaky_relu(x, kMlpLeakySlope);
    case Activation::kLinear: return x;
  }
  return x;
}

double output_act(Activation a, double x) {
  return a == Activation::kSigmoid ? x : sigmoid(x);
}

bool active(double gate) { return gate > 0.5; }

}  // namespace

void check_valid(const MlpSpec& spec) {
  const int l = spec.depth();
  if (l < 1) throw ConfigError("mlp: needs at least one hidden layer");
  if (spec.input_dim < 1 || spec.output_dim < 1) {
    throw ConfigError("mlp: input and output dims must be positive");
  }
  if (spec.weights.size() != static_cast<std::size_t>(l) + 1) {
    throw ConfigError("mlp: expected " + std::to_string(l + 1) +
                      " weight matrices, got " +
                      std::to_string(spec.weights.size()));
  }
  if (spec.masks.size() != static_cast<std::size_t>(l)) {
    throw ConfigError("mlp: expected one mask per hidden layer");
  }
  const int n_max = spec.n_max();
  if (spec.input_dim > n_max || spec.output_dim > n_max) {
    throw ConfigError("mlp: input/output dims must not exceed n_max=" +
                      std::to_string(n_max));
  }
  for (int k = 0; k <= l; ++k) {
    const int rows = k == 0 ? spec.input_dim : spec.hidden[k - 1];
    const int cols = k == l ? spec.output_dim : spec.hidden[k];
    const diff::Tensor& w = spec.weights[k];
    if (w.rank() != 2 || w.dim(0) != static_cast<std::size_t>(rows) ||
        w.dim(1) != static_cast<std::size_t>(cols)) {
      throw ConfigError("mlp: weight matrix " + std::to_string(k) +
                        " has shape " + diff::shape_str(w.shape()) +
                        ", expected [" + std::to_string(rows) + "," +
                        std::to_string(cols) + "]");
    }
  }
  for (int k = 0; k < l; ++k) {
    if (spec.hidden[k] < 1 || spec.hidden[k] > n_max) {
      throw ConfigError("mlp: hidden layer size out of [1, n_max]");
    }
    if (spec.masks[k].size() != static_cast<std::size_t>(n_max)) {
      throw ConfigError("mlp: mask vectors must all have n_max entries");
    }
    for (int j = 0; j < n_max; ++j) {
      const double g = spec.masks[k][j];
      if (g < 0.0 || g > 1.0) {
        throw ConfigError("mlp: mask values must lie in [0, 1]");
      }
      if (j >= spec.hidden[k] && g != 0.0) {
        throw ConfigError("mlp: mask set on a slot beyond the layer size");
      }
    }
  }
}

namespace {

// Shared layer-by-layer evaluation; `raw` skips the output activation.
void forward_into(const MlpSpec& spec, const double* x, double* out,
                  bool raw) {
  const int l = spec.depth();
  std::vector<double> cur(x, x + spec.input_dim);
  std::vector<double> next;
  for (int k = 0; k < l; ++k) {
    const diff::Tensor& w = spec.weights[k];
    const std::size_t rows = w.dim(0), cols = w.dim(1);
    next.assign(cols, 0.0);
    for (std::size_t a = 0; a < rows; ++a) {
      const double xa = cur[a];
      if (xa == 0.0) continue;
      const double* wrow = w.ptr() + a * cols;
      for (std::size_t b = 0; b < cols; ++b) next[b] += xa * wrow[b];
    }
    for (std::size_t b = 0; b < cols; ++b) {
      next[b] = hidden_act(spec.activation, next[b]) * spec.masks[k][b];
    }
    cur.swap(next);
  }
  const diff::Tensor& w = spec.weights[l];
  const std::size_t rows = w.dim(0), cols = w.dim(1);
  for (std::size_t b = 0; b < cols; ++b) out[b] = 0.0;
  for (std::size_t a = 0; a < rows; ++a) {
    const double xa = cur[a];
    if (xa == 0.0) continue;
    const double* wrow = w.ptr() + a * cols;
    for (std::size_t b = 0; b < cols; ++b) out[b] += xa * wrow[b];
  }
  if (!raw) {
    for (std::size_t b = 0; b < cols; ++b) {
      out[b] = output_act(spec.activation, out[b]);
    }
  }
}

}  // namespace

std::vector<double> mlp_forward(const MlpSpec& spec,
                                std::span<const double> x) {
  if (x.size() != static_cast<std::size_t>(spec.input_dim)) {
    throw ShapeError("mlp_forward: input length " + std::to_string(x.size()) +
                     ", expected " + std::to_string(spec.input_dim));
  }
  std::vector<double> out(spec.output_dim);
  forward_into(spec, x.data(), out.data(), false);
  return out;
}

std::vector<double> mlp_forward_raw(const MlpSpec& spec,
                                    std::span<const double> x) {
  if (x.size() != static_cast<std::size_t>(spec.input_dim)) {
    throw ShapeError("mlp_forward_raw: input length mismatch");
  }
  std::vector<double> out(spec.output_dim);
  forward_into(spec, x.data(), out.data(), true);
  return out;
}

diff::Tensor mlp_forward_batch(const MlpSpec& spec, const diff::Tensor& X) {
  if (X.rank() != 2 || X.dim(1) != static_cast<std::size_t>(spec.input_dim)) {
    throw ShapeError("mlp_forward_batch: inputs must be [N, " +
                     std::to_string(spec.input_dim) + "], got " +
                     diff::shape_str(X.shape()));
  }
  const std::size_t n = X.dim(0);
  diff::Tensor Y({n, static_cast<std::size_t>(spec.output_dim)});
  for (std::size_t r = 0; r < n; ++r) {
    forward_into(spec, X.ptr() + r * spec.input_dim,
                 Y.ptr() + r * spec.output_dim, false);
  }
  return Y;
}

MlpMatrix to_matrix(const MlpSpec& spec, int l_max, int n_max) {
  check_valid(spec);
  const int l = spec.depth();
  if (l > l_max) {
    throw ConfigError("to_matrix: depth " + std::to_string(l) +
                      " exceeds l_max=" + std::to_string(l_max));
  }
  if (spec.n_max() != n_max) {
    throw ConfigError("to_matrix: spec has n_max=" +
                      std::to_string(spec.n_max()) + ", expected " +
                      std::to_string(n_max));
  }
  for (int h : spec.hidden) {
    if (h > n_max) {
      throw ConfigError("to_matrix: hidden layer size " + std::to_string(h) +
                        " exceeds n_max=" + std::to_string(n_max));
    }
  }

  MlpMatrix m;
  m.n_max = n_max;
  m.values = diff::Tensor(
      {static_cast<std::size_t>(n_max), matrix_cols(l, n_max)});
  for (int k = 0; k <= l; ++k) {
    const diff::Tensor& w = spec.weights[k];
    for (std::size_t a = 0; a < w.dim(0); ++a) {
      for (std::size_t b = 0; b < w.dim(1); ++b) {
        m.values.at(a, static_cast<std::size_t>(k) * n_max + b) = w.at(a, b);
      }
    }
  }
  const std::size_t mask_base = static_cast<std::size_t>(l + 1) * n_max;
  for (int k = 0; k < l; ++k) {
    for (int j = 0; j < n_max; ++j) {
      m.values.at(j, mask_base + k) = spec.masks[k][j];
    }
  }
  return m;
}

MlpSpec from_matrix(const MlpMatrix& m, const MatrixMeta& meta, bool soft) {
  const int n = meta.n_max;
  const int l = meta.depth;
  if (m.n_max != n || m.values.rank() != 2 ||
      m.values.dim(0) != static_cast<std::size_t>(n) ||
      m.values.dim(1) != matrix_cols(l, n)) {
    throw FormatError("from_matrix: values shape " +
                      diff::shape_str(m.values.shape()) +
                      " does not match depth " + std::to_string(l) +
                      ", n_max " + std::to_string(n));
  }
  if (meta.input_dim < 1 || meta.input_dim > n || meta.output_dim < 1 ||
      meta.output_dim > n) {
    throw FormatError("from_matrix: input/output dims must lie in [1, n_max]");
  }

  MlpSpec spec;
  spec.activation = meta.activation;
  spec.input_dim = meta.input_dim;
  spec.output_dim = meta.output_dim;
  spec.hidden.assign(l, n);
  const std::size_t mask_base = static_cast<std::size_t>(l + 1) * n;
  for (int k = 0; k < l; ++k) {
    std::vector<double> gates(n);
    for (int j = 0; j < n; ++j) {
      const double v = m.values.at(j, mask_base + k);
      gates[j] = soft ? v : (active(v) ? 1.0 : 0.0);
    }
    spec.masks.push_back(std::move(gates));
  }
  for (int k = 0; k <= l; ++k) {
    const int rows = k == 0 ? meta.input_dim : n;
    const int cols = k == l ? meta.output_dim : n;
    diff::Tensor w({static_cast<std::size_t>(rows),
                    static_cast<std::size_t>(cols)});
    for (int a = 0; a < rows; ++a) {
      for (int b = 0; b < cols; ++b) {
        w.at(a, b) = m.values.at(a, static_cast<std::size_t>(k) * n + b);
      }
    }
    spec.weights.push_back(std::move(w));
  }
  if (!soft) spec = apply_mask(std::move(spec));
  return spec;
}

MlpSpec apply_mask(MlpSpec spec) {
  const int l = spec.depth();
  for (int k = 0; k < l; ++k) {
    diff::Tensor& in_w = spec.weights[k];
    diff::Tensor& out_w = spec.weights[k + 1];
    const std::size_t layer_size = in_w.dim(1);
    for (std::size_t j = 0; j < layer_size; ++j) {
      if (active(spec.masks[k][j])) continue;
      for (std::size_t a = 0; a < in_w.dim(0); ++a) in_w.at(a, j) = 0.0;
      for (std::size_t b = 0; b < out_w.dim(1); ++b) out_w.at(j, b) = 0.0;
    }
  }
  return spec;
}

std::size_t non_zero_count(const MlpSpec& spec) {
  std::size_t count = 0;
  for (const diff::Tensor& w : spec.weights) {
    for (double v : w.data()) {
      if (v != 0.0) ++count;
    }
  }
  return count;
}

MlpSpec prune(MlpSpec spec, double t) {
  if (t < 0.0) throw ConfigError("prune: threshold must be non-negative");
  for (diff::Tensor& w : spec.weights) {
    for (double& v : w.data()) {
      if (std::fabs(v) < t) v = 0.0;
    }
  }
  return apply_mask(std::move(spec));
}

bool spec_equal(const MlpSpec& a, const MlpSpec& b) {
  return a.activation == b.activation && a.input_dim == b.input_dim &&
         a.output_dim == b.output_dim && a.hidden == b.hidden &&
         a.weights == b.weights && a.masks == b.masks;
}

bool all_inputs_reach_output(const MlpSpec& spec) {
  const int l = spec.depth();
  for (int start = 0; start < spec.input_dim; ++start) {
    // Layer-synchronous reachability through non-zero weights.
    std::vector<char> frontier(spec.input_dim, 0);
    frontier[start] = 1;
    bool reached = false;
    for (int k = 0; k <= l; ++k) {
      const diff::Tensor& w = spec.weights[k];
      std::vector<char> next(w.dim(1), 0);
      for (std::size_t a = 0; a < w.dim(0); ++a) {
        if (!frontier[a]) continue;
        for (std::size_t b = 0; b < w.dim(1); ++b) {
          if (w.at(a, b) != 0.0) next[b] = 1;
        }
      }
      if (k < l) {
        for (std::size_t b = 0; b < next.size(); ++b) {
          if (!active(spec.masks[k][b])) next[b] = 0;
        }
      }
      frontier.swap(next);
    }
    for (char c : frontier) reached = reached || c;
    if (!reached) return false;
  }
  return true;
}

}  // namespace funcspace::net
