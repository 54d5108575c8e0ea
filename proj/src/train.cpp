#include "funcspace/train.hpp"

#include <cmath>

#include "funcspace/errors.hpp"
#include "funcspace/metrics.hpp"
#include "funcspace/parallel.hpp"
#include "funcspace/random.hpp"

namespace funcspace::ae {

LossSpec LossSpec::p_norm(double p) {
  if (p == 0.0) throw ConfigError("loss: p must be non-zero");
  LossSpec spec;
  spec.kind = Kind::kPNorm;
  spec.p = p;
  return spec;
}

LossSpec LossSpec::parse(const std::string& text) {
  if (text == "min") return min_loss();
  if (text.rfind("p:", 0) == 0) {
    std::size_t used = 0;
    double p = 0.0;
    try {
      p = std::stod(text.substr(2), &used);
    } catch (const std::exception&) {
      throw ConfigError("loss: cannot parse '" + text + "'");
    }
    if (used != text.size() - 2) {
      throw ConfigError("loss: trailing characters in '" + text + "'");
    }
    return p_norm(p);
  }
  throw ConfigError("loss: expected 'min' or 'p:<float>', got '" + text + "'");
}

std::string LossSpec::str() const {
  if (kind == Kind::kMin) return "min";
  std::string p_text = std::to_string(p);
  while (p_text.size() > 1 && p_text.back() == '0') p_text.pop_back();
  if (!p_text.empty() && p_text.back() == '.') p_text.pop_back();
  return "p:" + p_text;
}

void check_valid(const TrainConfig& cfg) {
  if (cfg.batch < 1) throw ConfigError("train: batch must be >= 1");
  if (cfg.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  // lr 0 is allowed as an explicit no-op step
  if (!(cfg.lr >= 0.0)) throw ConfigError("train: learning rate must be >= 0");
  if (cfg.loss.kind == LossSpec::Kind::kPNorm && cfg.loss.p == 0.0) {
    throw ConfigError("train: p must be non-zero");
  }
}

namespace {

// Fixed group count for gradient accumulation. Samples of a batch are
// assigned to groups by position; each group accumulates sequentially and
// groups merge in order, which pins the floating-point reduction order
// regardless of how many workers run.
constexpr std::size_t kGradGroups = 8;

diff::Var build_item_loss(Binder& binder, const diff::Tensor& enc_input,
                          int depth, diff::Var x, diff::Var y,
                          const LossSpec& loss) {
  diff::Tape& t = binder.tape;
  diff::Var z = build_encoder(binder, t.constant_ref(&enc_input), depth);
  std::vector<diff::Var> errors;
  for (const DecodedVar& d : build_decoder(binder, z)) {
    diff::Var pred = build_soft_predict(binder, d, x);
    diff::Var e = t.sub(pred, y);
    errors.push_back(t.sum(t.mul(e, e)));
  }
  if (loss.kind == LossSpec::Kind::kMin) return t.min_of(errors);
  diff::Var acc;
  for (diff::Var a : errors) {
    diff::Var term = t.pow(loss.p < 1.0 ? t.shift(a, 1e-12) : a, loss.p);
    acc = acc.valid() ? t.add(acc, term) : term;
  }
  return t.pow(acc, 1.0 / loss.p);
}

std::vector<diff::Tensor> snapshot_tensors(const AutoencoderParams& params) {
  std::vector<diff::Tensor> out;
  for (const auto& [name, tensor] : params.tensor_entries()) {
    out.push_back(*tensor);
  }
  return out;
}

void restore_tensors(AutoencoderParams& params,
                     const std::vector<diff::Tensor>& saved) {
  auto entries = params.tensor_entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    *entries[i].second = saved[i];
  }
}

bool params_finite(const AutoencoderParams& params) {
  for (const auto& [name, tensor] : params.tensor_entries()) {
    if (!tensor->all_finite()) return false;
  }
  return true;
}

struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step_count = 0;
  std::vector<diff::Tensor> m, v;

  explicit Adam(const AutoencoderParams& params) {
    for (const auto& [name, tensor] : params.tensor_entries()) {
      m.push_back(diff::Tensor::zeros(tensor->shape()));
      v.push_back(diff::Tensor::zeros(tensor->shape()));
    }
  }

  void step(AutoencoderParams& params,
            const std::vector<diff::Tensor>& grads, double lr) {
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, step_count);
    const double bc2 = 1.0 - std::pow(beta2, step_count);
    auto entries = params.tensor_entries();
    for (std::size_t e = 0; e < entries.size(); ++e) {
      double* th = entries[e].second->ptr();
      const double* g = grads[e].ptr();
      double* mp = m[e].ptr();
      double* vp = v[e].ptr();
      const std::size_t count = grads[e].size();
      for (std::size_t i = 0; i < count; ++i) {
        mp[i] = beta1 * mp[i] + (1.0 - beta1) * g[i];
        vp[i] = beta2 * vp[i] + (1.0 - beta2) * g[i] * g[i];
        th[i] -= lr * (mp[i] / bc1) / (std::sqrt(vp[i] / bc2) + eps);
      }
    }
  }
};

std::vector<diff::Tensor> cache_encoder_inputs(const AutoencoderParams& params,
                                               const gen::Corpus& corpus) {
  std::vector<diff::Tensor> cache(corpus.items.size());
  util::parallel_for(corpus.items.size(), [&](std::size_t i) {
    cache[i] = encoder_input(params.arch, corpus.items[i].spec);
  });
  return cache;
}

EmbeddingStats stats_from_inputs(const AutoencoderParams& params,
                                 const std::vector<diff::Tensor>& enc_inputs,
                                 const gen::Corpus& corpus) {
  const std::size_t count = corpus.items.size();
  const std::size_t d_z = static_cast<std::size_t>(params.arch.d_z);
  std::vector<std::vector<double>> zs(count);
  util::parallel_for(count, [&](std::size_t i) {
    diff::Tape tape;
    Binder binder(tape, params);
    diff::Var z = build_encoder(binder, tape.constant_ref(&enc_inputs[i]),
                                corpus.items[i].spec.depth());
    const diff::Tensor& zv = z.value();
    zs[i].assign(zv.data().begin(), zv.data().end());
  });

  EmbeddingStats stats;
  stats.mean.assign(d_z, 0.0);
  stats.stdev.assign(d_z, 0.0);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < d_z; ++j) stats.mean[j] += zs[i][j];
  }
  for (std::size_t j = 0; j < d_z; ++j) {
    stats.mean[j] /= static_cast<double>(count);
  }
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < d_z; ++j) {
      const double d = zs[i][j] - stats.mean[j];
      stats.stdev[j] += d * d;
    }
  }
  for (std::size_t j = 0; j < d_z; ++j) {
    stats.stdev[j] = std::sqrt(stats.stdev[j] / static_cast<double>(count));
  }
  return stats;
}

}  // namespace

EmbeddingStats compute_embedding_stats(const AutoencoderParams& params,
                                       const gen::Corpus& corpus) {
  if (corpus.items.empty()) {
    throw ConfigError("embedding stats: corpus must not be empty");
  }
  return stats_from_inputs(params, cache_encoder_inputs(params, corpus),
                           corpus);
}

double batch_loss(const AutoencoderParams& params, const gen::Corpus& corpus,
                  std::span<const std::size_t> indices, const LossSpec& loss) {
  double total = 0.0;
  for (std::size_t idx : indices) {
    const gen::CorpusItem& item = corpus.items[idx];
    const auto errors =
        decoder_sq_errors(params, item.spec, corpus.grid, item.outputs);
    total += loss.kind == LossSpec::Kind::kMin ? aggregate_min(errors)
                                               : aggregate_p(errors, loss.p);
  }
  return total;
}

TrainLog train_autoencoder(const TrainConfig& cfg, const gen::Corpus& corpus,
                           AutoencoderParams& params,
                           const EpochCallback& on_epoch) {
  check_valid(cfg);
  check_valid(params.arch);
  if (corpus.items.empty()) throw ConfigError("train: corpus must not be empty");

  const auto entries = params.tensor_entries();
  const std::size_t n_entries = entries.size();
  const std::size_t item_count = corpus.items.size();

  const std::vector<diff::Tensor> enc_inputs =
      cache_encoder_inputs(params, corpus);

  std::vector<std::vector<diff::Tensor>> sinks(kGradGroups);
  for (auto& group : sinks) {
    group.reserve(n_entries);
    for (const auto& [name, tensor] : entries) {
      group.push_back(diff::Tensor::zeros(tensor->shape()));
    }
  }
  std::vector<diff::Tensor> master;
  master.reserve(n_entries);
  for (const auto& [name, tensor] : entries) {
    master.push_back(diff::Tensor::zeros(tensor->shape()));
  }

  Adam adam(params);
  std::vector<diff::Tensor> last_good = snapshot_tensors(params);
  TrainLog log;

  std::vector<std::size_t> order(item_count);
  for (std::size_t i = 0; i < item_count; ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    util::Rng shuffle_rng(
        util::derive_seed(cfg.seed, 0xe70c4 + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    bool epoch_ok = true;

    for (std::size_t b0 = 0; b0 < item_count && epoch_ok;
         b0 += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t bsize =
          std::min<std::size_t>(cfg.batch, item_count - b0);
      const std::size_t groups = std::min<std::size_t>(kGradGroups, bsize);
      const std::size_t chunk = (bsize + groups - 1) / groups;

      for (std::size_t g = 0; g < groups; ++g) {
        for (diff::Tensor& t : sinks[g]) t.fill(0.0);
      }
      std::vector<double> sample_losses(bsize, 0.0);

      try {
        util::parallel_for(groups, [&](std::size_t g) {
          const std::size_t lo = g * chunk;
          const std::size_t hi = std::min(lo + chunk, bsize);
          for (std::size_t s = lo; s < hi; ++s) {
            const std::size_t idx = order[b0 + s];
            const gen::CorpusItem& item = corpus.items[idx];
            diff::Tape tape;
            Binder binder(tape, params, &sinks[g]);
            diff::Var x = tape.constant_ref(&corpus.grid);
            diff::Var y = tape.constant_ref(&item.outputs);
            diff::Var loss = build_item_loss(binder, enc_inputs[idx],
                                             item.spec.depth(), x, y, cfg.loss);
            sample_losses[s] = loss.value()[0];
            tape.backward(loss);
          }
        });
      } catch (const NonFiniteError&) {
        epoch_ok = false;
        break;
      }

      for (double v : sample_losses) epoch_loss += v;

      for (std::size_t e = 0; e < n_entries; ++e) {
        double* dst = master[e].ptr();
        const std::size_t count = master[e].size();
        const double* first = sinks[0][e].ptr();
        for (std::size_t i = 0; i < count; ++i) dst[i] = first[i];
        for (std::size_t g = 1; g < groups; ++g) {
          const double* src = sinks[g][e].ptr();
          for (std::size_t i = 0; i < count; ++i) dst[i] += src[i];
        }
      }
      adam.step(params, master, cfg.lr);
    }

    if (!epoch_ok || !params_finite(params) || !std::isfinite(epoch_loss)) {
      restore_tensors(params, last_good);
      log.diverged = true;
      return log;
    }

    log.epoch_mean_loss.push_back(epoch_loss /
                                  static_cast<double>(item_count));
    log.epochs_completed = epoch + 1;
    last_good = snapshot_tensors(params);
    if (on_epoch) on_epoch(epoch + 1, log.epoch_mean_loss.back(), params);
  }

  params.stats = stats_from_inputs(params, enc_inputs, corpus);
  return log;
}

}  // namespace funcspace::ae
