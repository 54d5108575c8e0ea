#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "funcspace/mlp.hpp"
#include "funcspace/random.hpp"
#include "funcspace/tensor.hpp"

namespace funcspace::gen {

// Controls random sparse-MLP generation.
//
// A network is built by drawing a depth, drawing hidden sizes, fixing one
// random input-to-output path per input so connectivity is guaranteed,
// removing a random fraction of the remaining links, and assigning uniform
// weights to the survivors. A single removal fraction applies per network.
struct GenConfig {
  net::Activation activation = net::Activation::kSigmoid;
  int input_dim = 3;
  int output_dim = 1;
  int n_max = 7;
  int l_max = 4;
  int hidden_min = 3;
  int hidden_max = 7;
  std::vector<double> removal_fractions = {0.5, 0.7, 0.8, 0.9};
  // 0 selects the default for the activation kind: 10 for sigmoid-based
  // networks, 3 otherwise.
  double weight_range = 0.0;
  std::uint64_t seed = 0;
  // Evaluation aid: pins the depth instead of drawing it uniformly.
  std::optional<int> fixed_depth;

  double effective_weight_range() const {
    if (weight_range > 0.0) return weight_range;
    return activation == net::Activation::kSigmoid ? 10.0 : 3.0;
  }
};

void check_valid(const GenConfig& cfg);

// Input/output rows with contiguous train/val/test ranges (train rows first).
// Values are quantized to 32-bit real precision at creation so the binary
// dataset format round-trips exactly.
struct FunctionalDataset {
  diff::Tensor inputs;   // [N, input_dim]
  diff::Tensor outputs;  // [N, output_dim]
  std::size_t train_count = 0;
  std::size_t val_count = 0;
  std::size_t test_count = 0;

  std::size_t rows() const { return inputs.empty() ? 0 : inputs.dim(0); }
};

// Bookkeeping from one generation, for audits.
struct GenTrace {
  double removal_fraction = 0.0;
  std::size_t total_links = 0;
  std::size_t fixed_links = 0;
  std::size_t kept_links = 0;
};

net::MlpSpec random_mlp(const GenConfig& cfg, util::Rng& rng,
                        GenTrace* trace = nullptr);

// Cartesian grid over [lo, hi]^dims with per_dim equally spaced values,
// endpoints included; dimension 0 varies slowest.
diff::Tensor grid_inputs(int dims = 3, int per_dim = 10, double lo = -1.0,
                         double hi = 1.0);

// Evaluates the network on the given inputs. No split structure (all rows
// land in the train range).
FunctionalDataset make_functional_dataset(const net::MlpSpec& spec,
                                          const diff::Tensor& inputs);

// Uniform random inputs over [-1,1]^input_dim with ratio-proportional splits
// (train and val counts floor, test takes the remainder).
FunctionalDataset make_search_dataset(const net::MlpSpec& spec, std::size_t n,
                                      std::array<int, 3> ratio,
                                      util::Rng& rng);

// One training sample: a network plus its outputs on the shared grid.
struct CorpusItem {
  net::MlpSpec spec;
  diff::Tensor outputs;  // [grid rows, output_dim]
};

struct Corpus {
  diff::Tensor grid;  // shared inputs, computed once
  std::vector<CorpusItem> items;
};

// Generates `count` independent samples. Sample i draws from a stream seeded
// by (cfg.seed, i), so corpora are reproducible byte-for-byte and generation
// parallelizes without changing results.
Corpus gen_corpus(const GenConfig& cfg, std::size_t count);

}  // namespace funcspace::gen
