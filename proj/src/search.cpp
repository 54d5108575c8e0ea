#include "funcspace/search.hpp"

#include <algorithm>
#include <cmath>

#include "funcspace/errors.hpp"
#include "funcspace/mathx.hpp"
#include "funcspace/metrics.hpp"
#include "funcspace/parallel.hpp"

namespace funcspace::emb {

void check_valid(const SearchConfig& cfg, const ae::ArchConfig& arch) {
  if (cfg.iterations < 1) throw ConfigError("search: iterations must be >= 1");
  if (!(cfg.lr_z >= 0.0)) throw ConfigError("search: lr_z must be >= 0");
  if (!(cfg.lr_t >= 0.0)) throw ConfigError("search: lr_t must be >= 0");
  if (cfg.alpha < 0.0) throw ConfigError("search: alpha must be >= 0");
  if (cfg.minibatch < 0) throw ConfigError("search: minibatch must be >= 0");
  if (cfg.restarts < 1) throw ConfigError("search: restarts must be >= 1");
  for (int d : cfg.decoders) {
    if (d < 1 || d > arch.l_max) {
      throw ConfigError("search: decoder index " + std::to_string(d) +
                        " out of [1, " + std::to_string(arch.l_max) + "]");
    }
  }
}

std::vector<double> sample_embedding(const ae::AutoencoderParams& params,
                                     util::Rng& rng) {
  if (!params.stats.present()) {
    throw ConfigError(
        "sample_embedding: checkpoint carries no embedding statistics");
  }
  const std::size_t d_z = params.stats.mean.size();
  std::vector<double> z(d_z);
  for (std::size_t j = 0; j < d_z; ++j) {
    z[j] = params.stats.mean[j] + params.stats.stdev[j] * rng.normal();
  }
  return z;
}

double soft_count(std::span<const double> w, double t) {
  double acc = 0.0;
  for (double v : w) acc += sigmoid(10.0 * (std::fabs(v) - t));
  return 0.5 * acc;
}

double soft_count_aggregate(std::span<const double> w, double t) {
  double norm = 0.0;
  for (double v : w) norm += std::fabs(v - t);
  return 0.5 * sigmoid(10.0 * norm);
}

double sparsity_penalty(std::span<const double> w, double t, double alpha,
                        SoftCountForm form) {
  if (alpha < 0.0) throw ConfigError("sparsity_penalty: alpha must be >= 0");
  if (t < 0.0) throw ConfigError("sparsity_penalty: t must be >= 0");
  double l1 = 0.0;
  for (double v : w) l1 += std::fabs(v);
  const double count = form == SoftCountForm::kPerElement
                           ? soft_count(w, t)
                           : soft_count_aggregate(w, t);
  return alpha * (0.1 * l1 + count);
}

diff::Var build_sparsity_penalty(diff::Tape& tape, diff::Var weights,
                                 diff::Var t, double alpha,
                                 SoftCountForm form) {
  diff::Var l1 = tape.scale(tape.sum(tape.abs(weights)), 0.1);
  diff::Var count;
  if (form == SoftCountForm::kPerElement) {
    diff::Var shifted = tape.axpy_scalar(tape.abs(weights), t, -1.0);
    count = tape.scale(tape.sum(tape.sigmoid(tape.scale(shifted, 10.0))), 0.5);
  } else {
    diff::Var norm = tape.sum(tape.abs(tape.axpy_scalar(weights, t, -1.0)));
    count = tape.scale(tape.sigmoid(tape.scale(norm, 10.0)), 0.5);
  }
  return tape.scale(tape.add(l1, count), alpha);
}

double search_loss(const ae::AutoencoderParams& params,
                   std::span<const double> z, double t_value, int decoder,
                   const diff::Tensor& X, const diff::Tensor& Y, double alpha,
                   SoftCountForm form) {
  if (alpha < 0.0) throw ConfigError("search_loss: alpha must be >= 0");
  diff::Tape tape;
  ae::Binder binder(tape, params);
  diff::Var zv = tape.constant(
      diff::Tensor({z.size()}, std::vector<double>(z.begin(), z.end())));
  const ae::DecodedVar d = ae::build_decoder_single(binder, zv, decoder);
  diff::Var pred = ae::build_soft_predict(binder, d, tape.constant_ref(&X));
  diff::Var err = tape.sub(pred, tape.constant_ref(&Y));
  diff::Var loss = tape.sum(tape.mul(err, err));
  if (alpha > 0.0) {
    diff::Var gated = ae::build_gated_weights(binder, d);
    diff::Var tv = tape.constant(diff::Tensor::scalar(t_value));
    loss = tape.add(loss,
                    build_sparsity_penalty(tape, gated, tv, alpha, form));
  }
  return loss.value()[0];
}

namespace {

diff::Tensor slice_rows(const diff::Tensor& src, std::size_t begin,
                        std::size_t count) {
  const std::size_t cols = src.dim(1);
  diff::Tensor out({count, cols});
  for (std::size_t r = 0; r < count; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out.at(r, c) = src.at(begin + r, c);
    }
  }
  return out;
}

struct SplitViews {
  diff::Tensor train_x, train_y, val_x, val_y, test_x, test_y;
};

SplitViews split_dataset(const gen::FunctionalDataset& data) {
  SplitViews v;
  v.train_x = slice_rows(data.inputs, 0, data.train_count);
  v.train_y = slice_rows(data.outputs, 0, data.train_count);
  v.val_x = slice_rows(data.inputs, data.train_count, data.val_count);
  v.val_y = slice_rows(data.outputs, data.train_count, data.val_count);
  v.test_x = slice_rows(data.inputs, data.train_count + data.val_count,
                        data.test_count);
  v.test_y = slice_rows(data.outputs, data.train_count + data.val_count,
                        data.test_count);
  return v;
}

net::MlpSpec hard_decode_single(const ae::AutoencoderParams& params,
                                std::span<const double> z, int decoder) {
  diff::Tape tape;
  ae::Binder binder(tape, params);
  diff::Var zv = tape.constant(
      diff::Tensor({z.size()}, std::vector<double>(z.begin(), z.end())));
  const ae::DecodedVar d = ae::build_decoder_single(binder, zv, decoder);
  const net::MlpMatrix m = ae::materialize_matrix(params.arch, d);
  const net::MatrixMeta meta{params.arch.activation, params.arch.input_dim,
                             params.arch.output_dim, decoder,
                             params.arch.n_max};
  return net::from_matrix(m, meta, false);
}

DecoderResult run_search(const ae::AutoencoderParams& params,
                         const SplitViews& splits, const SearchConfig& cfg,
                         int decoder, int restart) {
  util::Rng rng(util::derive_seed(
      cfg.seed, static_cast<std::uint64_t>(decoder) * 0x10001 +
                    static_cast<std::uint64_t>(restart)));

  DecoderResult result;
  result.decoder = decoder;
  result.restart = restart;
  result.z = sample_embedding(params, rng);
  double t_value = 0.0;

  const std::size_t train_rows = splits.train_x.dim(0);
  const std::size_t batch =
      cfg.minibatch == 0
          ? train_rows
          : std::min<std::size_t>(cfg.minibatch, train_rows);

  std::vector<double> z = result.z;
  diff::Tensor batch_x({batch, splits.train_x.dim(1)});
  diff::Tensor batch_y({batch, splits.train_y.dim(1)});

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const std::size_t start =
        (static_cast<std::size_t>(iter) * batch) % train_rows;
    for (std::size_t r = 0; r < batch; ++r) {
      const std::size_t row = (start + r) % train_rows;
      for (std::size_t c = 0; c < batch_x.dim(1); ++c) {
        batch_x.at(r, c) = splits.train_x.at(row, c);
      }
      for (std::size_t c = 0; c < batch_y.dim(1); ++c) {
        batch_y.at(r, c) = splits.train_y.at(row, c);
      }
    }

    const std::vector<double> prev_z = z;
    const double prev_t = t_value;
    try {
      diff::Tape tape;
      ae::Binder binder(tape, params);
      diff::Var zv = tape.variable(diff::Tensor({z.size()}, z));
      diff::Var tv = tape.variable(diff::Tensor::scalar(t_value));
      const ae::DecodedVar d = ae::build_decoder_single(binder, zv, decoder);
      diff::Var pred =
          ae::build_soft_predict(binder, d, tape.constant_ref(&batch_x));
      diff::Var err = tape.sub(pred, tape.constant_ref(&batch_y));
      diff::Var loss = tape.sum(tape.mul(err, err));
      if (cfg.alpha > 0.0) {
        diff::Var gated = ae::build_gated_weights(binder, d);
        loss = tape.add(loss, build_sparsity_penalty(tape, gated, tv,
                                                     cfg.alpha, cfg.softcount));
      }
      tape.backward(loss);

      const diff::Tensor& gz = tape.grad(zv);
      for (std::size_t j = 0; j < z.size(); ++j) z[j] -= cfg.lr_z * gz[j];
      if (cfg.alpha > 0.0) {
        // threshold steps against the sparsity term only
        const diff::Tensor& gt = tape.grad(tv);
        if (!gt.empty()) t_value -= cfg.lr_t * gt[0];
        t_value = std::max(0.0, t_value);
      }

      result.train_loss.push_back(loss.value()[0]);
      result.t_history.push_back(t_value);
      for (double v : z) {
        if (!std::isfinite(v)) {
          throw NonFiniteError("search: embedding diverged", 0);
        }
      }
    } catch (const NonFiniteError&) {
      // roll back to the last finite state and stop
      z = prev_z;
      t_value = prev_t;
      result.diverged = true;
      break;
    }

    if (cfg.val_interval > 0 && (iter + 1) % cfg.val_interval == 0 &&
        splits.val_x.dim(0) > 0) {
      diff::Tape tape;
      ae::Binder binder(tape, params);
      diff::Var zv = tape.constant(diff::Tensor({z.size()}, z));
      const ae::DecodedVar d = ae::build_decoder_single(binder, zv, decoder);
      diff::Var pred =
          ae::build_soft_predict(binder, d, tape.constant_ref(&splits.val_x));
      diff::Var err = tape.sub(pred, tape.constant_ref(&splits.val_y));
      result.val_loss.emplace_back(iter + 1,
                                   tape.sum(tape.mul(err, err)).value()[0]);
    }
  }

  result.z = z;
  result.final_t = t_value;
  result.spec =
      net::prune(hard_decode_single(params, z, decoder), t_value);
  result.non_zero = net::non_zero_count(result.spec);
  result.val_mpe =
      ae::mpe(net::mlp_forward_batch(result.spec, splits.val_x), splits.val_y);
  result.test_mpe = ae::mpe(net::mlp_forward_batch(result.spec, splits.test_x),
                            splits.test_y);
  return result;
}

}  // namespace

SearchResult search_optimal(const ae::AutoencoderParams& params,
                            const gen::FunctionalDataset& data,
                            const SearchConfig& cfg) {
  check_valid(cfg, params.arch);
  if (!params.stats.present()) {
    throw ConfigError("search: checkpoint carries no embedding statistics");
  }
  if (data.train_count < 1 || data.val_count < 1 || data.test_count < 1) {
    throw ConfigError("search: dataset needs non-empty train/val/test splits");
  }
  if (data.inputs.dim(1) != static_cast<std::size_t>(params.arch.input_dim) ||
      data.outputs.dim(1) !=
          static_cast<std::size_t>(params.arch.output_dim)) {
    throw ConfigError("search: dataset dimensions do not match the checkpoint");
  }

  std::vector<int> decoders = cfg.decoders;
  if (decoders.empty()) {
    for (int d = 1; d <= params.arch.l_max; ++d) decoders.push_back(d);
  }
  std::sort(decoders.begin(), decoders.end());

  const SplitViews splits = split_dataset(data);
  const std::size_t jobs =
      decoders.size() * static_cast<std::size_t>(cfg.restarts);
  std::vector<DecoderResult> all(jobs);
  util::parallel_for(jobs, [&](std::size_t j) {
    const int decoder = decoders[j / cfg.restarts];
    const int restart = static_cast<int>(j % cfg.restarts);
    all[j] = run_search(params, splits, cfg, decoder, restart);
  });

  SearchResult result;
  for (std::size_t d = 0; d < decoders.size(); ++d) {
    std::size_t best = d * cfg.restarts;
    for (std::size_t r = 1; r < static_cast<std::size_t>(cfg.restarts); ++r) {
      const std::size_t j = d * cfg.restarts + r;
      if (all[j].val_mpe < all[best].val_mpe) best = j;
    }
    result.per_decoder.push_back(std::move(all[best]));
  }
  return result;
}

TradeoffCurve tradeoff_scan(const ae::AutoencoderParams& params,
                            const gen::FunctionalDataset& data, int decoder,
                            std::span<const double> alphas,
                            const SearchConfig& base) {
  if (alphas.empty()) throw ConfigError("tradeoff_scan: empty alpha list");
  for (std::size_t i = 1; i < alphas.size(); ++i) {
    if (!(alphas[i] > alphas[i - 1])) {
      throw ConfigError("tradeoff_scan: alphas must be strictly increasing");
    }
  }

  TradeoffCurve curve;
  curve.decoder = decoder;
  for (double alpha : alphas) {
    SearchConfig cfg = base;
    cfg.alpha = alpha;
    cfg.decoders = {decoder};
    const SearchResult res = search_optimal(params, data, cfg);
    const DecoderResult& r = res.per_decoder.front();
    curve.points.push_back({alpha, r.non_zero, r.test_mpe});
  }
  return curve;
}

double constant_predictor_mpe(const gen::FunctionalDataset& data, double eps) {
  if (data.train_count < 1 || data.test_count < 1) {
    throw ConfigError("constant_predictor_mpe: needs train and test rows");
  }
  const std::size_t dims = data.outputs.dim(1);
  std::vector<double> constants(dims);
  for (std::size_t c = 0; c < dims; ++c) {
    std::vector<double> column(data.train_count);
    for (std::size_t r = 0; r < data.train_count; ++r) {
      column[r] = data.outputs.at(r, c);
    }
    constants[c] = median(std::move(column));
  }
  const std::size_t test_begin = data.train_count + data.val_count;
  std::vector<double> ratios;
  ratios.reserve(data.test_count * dims);
  for (std::size_t r = 0; r < data.test_count; ++r) {
    for (std::size_t c = 0; c < dims; ++c) {
      const double y = data.outputs.at(test_begin + r, c);
      ratios.push_back(std::fabs(y - constants[c]) / (std::fabs(y) + eps));
    }
  }
  return median(std::move(ratios));
}

}  // namespace funcspace::emb
