#include "funcspace/generate.hpp"

#include <cmath>
#include <numeric>

#include "funcspace/errors.hpp"
#include "funcspace/mathx.hpp"
#include "funcspace/parallel.hpp"

namespace funcspace::gen {

void check_valid(const GenConfig& cfg) {
  if (cfg.input_dim < 1 || cfg.output_dim < 1) {
    throw ConfigError("gen: input and output dims must be positive");
  }
  if (cfg.l_max < 1) throw ConfigError("gen: l_max must be >= 1");
  if (cfg.hidden_min < 1 || cfg.hidden_min > cfg.hidden_max) {
    throw ConfigError("gen: need 1 <= hidden_min <= hidden_max");
  }
  if (cfg.hidden_max > cfg.n_max) {
    throw ConfigError("gen: hidden_max exceeds n_max");
  }
  if (cfg.input_dim > cfg.n_max || cfg.output_dim > cfg.n_max) {
    throw ConfigError("gen: input/output dims must not exceed n_max");
  }
  if (cfg.removal_fractions.empty()) {
    throw ConfigError("gen: removal_fractions must not be empty");
  }
  for (double f : cfg.removal_fractions) {
    if (f < 0.0 || f >= 1.0) {
      throw ConfigError("gen: removal fractions must lie in [0, 1)");
    }
  }
  if (cfg.weight_range < 0.0) {
    throw ConfigError("gen: weight_range must be non-negative");
  }
  if (cfg.fixed_depth && (*cfg.fixed_depth < 1 || *cfg.fixed_depth > cfg.l_max)) {
    throw ConfigError("gen: fixed_depth out of [1, l_max]");
  }
}

net::MlpSpec random_mlp(const GenConfig& cfg, util::Rng& rng, GenTrace* trace) {
  check_valid(cfg);

  const int l =
      cfg.fixed_depth ? *cfg.fixed_depth
                      : 1 + static_cast<int>(rng.index(cfg.l_max));
  std::vector<int> sizes;
  sizes.push_back(cfg.input_dim);
  for (int k = 0; k < l; ++k) {
    sizes.push_back(cfg.hidden_min +
                    static_cast<int>(
                        rng.index(cfg.hidden_max - cfg.hidden_min + 1)));
  }
  sizes.push_back(cfg.output_dim);

  // Per-layer link flags: fixed paths first, then the sampled survivors.
  std::vector<std::vector<char>> fixed(l + 1), kept(l + 1);
  for (int k = 0; k <= l; ++k) {
    fixed[k].assign(static_cast<std::size_t>(sizes[k]) * sizes[k + 1], 0);
    kept[k] = fixed[k];
  }

  // One random path per input; paths may share nodes and links.
  for (int a = 0; a < cfg.input_dim; ++a) {
    int node = a;
    for (int k = 0; k < l; ++k) {
      const int j = static_cast<int>(rng.index(sizes[k + 1]));
      fixed[k][static_cast<std::size_t>(node) * sizes[k + 1] + j] = 1;
      node = j;
    }
    const int out = static_cast<int>(rng.index(cfg.output_dim));
    fixed[l][static_cast<std::size_t>(node) * cfg.output_dim + out] = 1;
  }

  std::size_t total_links = 0, fixed_count = 0;
  for (int k = 0; k <= l; ++k) {
    total_links += fixed[k].size();
    for (char c : fixed[k]) fixed_count += c;
  }

  const double fraction =
      cfg.removal_fractions[rng.index(cfg.removal_fractions.size())];
  const std::size_t keep_target = std::max<std::size_t>(
      static_cast<std::size_t>(
          std::llround((1.0 - fraction) * static_cast<double>(total_links))),
      fixed_count);

  // Canonically ordered pool of removable links, shuffled.
  struct Link {
    int layer, from, to;
  };
  std::vector<Link> pool;
  pool.reserve(total_links - fixed_count);
  for (int k = 0; k <= l; ++k) {
    for (int a = 0; a < sizes[k]; ++a) {
      for (int b = 0; b < sizes[k + 1]; ++b) {
        if (!fixed[k][static_cast<std::size_t>(a) * sizes[k + 1] + b]) {
          pool.push_back({k, a, b});
        }
      }
    }
  }
  rng.shuffle(pool);

  for (int k = 0; k <= l; ++k) kept[k] = fixed[k];
  const std::size_t extra = keep_target - fixed_count;
  for (std::size_t i = 0; i < extra; ++i) {
    const Link& link = pool[i];
    kept[link.layer][static_cast<std::size_t>(link.from) * sizes[link.layer + 1] +
                     link.to] = 1;
  }

  // Weights drawn in canonical link order so the draw sequence is pinned.
  const double range = cfg.effective_weight_range();
  net::MlpSpec spec;
  spec.activation = cfg.activation;
  spec.input_dim = cfg.input_dim;
  spec.output_dim = cfg.output_dim;
  spec.hidden.assign(sizes.begin() + 1, sizes.end() - 1);
  for (int k = 0; k <= l; ++k) {
    diff::Tensor w({static_cast<std::size_t>(sizes[k]),
                    static_cast<std::size_t>(sizes[k + 1])});
    for (int a = 0; a < sizes[k]; ++a) {
      for (int b = 0; b < sizes[k + 1]; ++b) {
        if (!kept[k][static_cast<std::size_t>(a) * sizes[k + 1] + b]) continue;
        double v = 0.0;
        do {
          v = rng.uniform(-range, range);
        } while (v == 0.0);
        w.at(a, b) = v;
      }
    }
    spec.weights.push_back(std::move(w));
  }
  for (int k = 0; k < l; ++k) {
    std::vector<double> mask(cfg.n_max, 0.0);
    for (int j = 0; j < sizes[k + 1]; ++j) mask[j] = 1.0;
    spec.masks.push_back(std::move(mask));
  }

  if (trace) {
    trace->removal_fraction = fraction;
    trace->total_links = total_links;
    trace->fixed_links = fixed_count;
    trace->kept_links = keep_target;
  }
  return spec;
}

diff::Tensor grid_inputs(int dims, int per_dim, double lo, double hi) {
  if (dims < 1 || per_dim < 2) {
    throw ConfigError("grid_inputs: need dims >= 1 and per_dim >= 2");
  }
  std::size_t rows = 1;
  for (int d = 0; d < dims; ++d) rows *= static_cast<std::size_t>(per_dim);
  const double step = (hi - lo) / (per_dim - 1);

  diff::Tensor X({rows, static_cast<std::size_t>(dims)});
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t rem = r;
    for (int d = dims - 1; d >= 0; --d) {
      const std::size_t idx = rem % per_dim;
      rem /= per_dim;
      X.at(r, d) = idx + 1 == static_cast<std::size_t>(per_dim)
                       ? hi
                       : lo + step * static_cast<double>(idx);
    }
  }
  return X;
}

namespace {

diff::Tensor quantized(const diff::Tensor& t) {
  diff::Tensor out = t;
  for (double& v : out.data()) v = quantize_f32(v);
  return out;
}

}  // namespace

FunctionalDataset make_functional_dataset(const net::MlpSpec& spec,
                                          const diff::Tensor& inputs) {
  net::check_valid(spec);
  FunctionalDataset ds;
  ds.inputs = quantized(inputs);
  ds.outputs = quantized(net::mlp_forward_batch(spec, ds.inputs));
  ds.train_count = ds.rows();
  return ds;
}

FunctionalDataset make_search_dataset(const net::MlpSpec& spec, std::size_t n,
                                      std::array<int, 3> ratio,
                                      util::Rng& rng) {
  net::check_valid(spec);
  if (n == 0) throw ConfigError("make_search_dataset: n must be positive");
  const int ratio_sum = ratio[0] + ratio[1] + ratio[2];
  if (ratio[0] < 1 || ratio[1] < 0 || ratio[2] < 0 || ratio_sum < 1) {
    throw ConfigError("make_search_dataset: bad split ratio");
  }

  diff::Tensor X({n, static_cast<std::size_t>(spec.input_dim)});
  for (double& v : X.data()) v = quantize_f32(rng.uniform(-1.0, 1.0));

  FunctionalDataset ds;
  ds.inputs = std::move(X);
  ds.outputs = quantized(net::mlp_forward_batch(spec, ds.inputs));
  ds.train_count = n * static_cast<std::size_t>(ratio[0]) / ratio_sum;
  ds.val_count = n * static_cast<std::size_t>(ratio[1]) / ratio_sum;
  ds.test_count = n - ds.train_count - ds.val_count;
  return ds;
}

Corpus gen_corpus(const GenConfig& cfg, std::size_t count) {
  check_valid(cfg);
  if (count == 0) throw ConfigError("gen_corpus: count must be positive");

  Corpus corpus;
  corpus.grid = quantized(grid_inputs(cfg.input_dim, 10, -1.0, 1.0));
  corpus.items.resize(count);
  util::parallel_for(count, [&](std::size_t i) {
    util::Rng rng(util::derive_seed(cfg.seed, i));
    CorpusItem& item = corpus.items[i];
    item.spec = random_mlp(cfg, rng);
    item.outputs = quantized(net::mlp_forward_batch(item.spec, corpus.grid));
  });
  return corpus;
}

}  // namespace funcspace::gen
