#include "funcspace/autoencoder.hpp"

#include <cmath>

#include "funcspace/errors.hpp"
#include "funcspace/mathx.hpp"
#include "funcspace/random.hpp"

namespace funcspace::ae {

void check_valid(const ArchConfig& arch) {
  if (arch.input_dim < 1 || arch.output_dim < 1) {
    throw ConfigError("arch: input/output dims must be positive");
  }
  if (arch.n_max < 1 || arch.l_max < 1) {
    throw ConfigError("arch: n_max and l_max must be positive");
  }
  if (arch.input_dim > arch.n_max || arch.output_dim > arch.n_max) {
    throw ConfigError("arch: input/output dims must not exceed n_max");
  }
  if (arch.d_z < 1) throw ConfigError("arch: d_z must be positive");
  if (arch.trunk_widths.size() != 3) {
    throw ConfigError("arch: trunk_widths needs exactly 3 entries");
  }
  for (int w : arch.trunk_widths) {
    if (w < 1) throw ConfigError("arch: trunk widths must be positive");
  }
  if (arch.channels.size() != 7) {
    throw ConfigError("arch: channel schedule needs exactly 7 entries");
  }
  for (int c : arch.channels) {
    if (c < 1) throw ConfigError("arch: channel counts must be positive");
  }
  if (arch.input_scale < 0.0) {
    throw ConfigError("arch: input_scale must be non-negative");
  }
}

namespace {

// Encoder conv j maps enc_in(j) -> channels[j] channels.
int enc_in_channels(const ArchConfig& arch, int j) {
  return j == 0 ? 1 : arch.channels[j - 1];
}

// Decoder conv j walks the reversed schedule down to 1 channel.
int dec_in_channels(const ArchConfig& arch, int j) {
  return arch.channels[6 - j];
}
int dec_out_channels(const ArchConfig& arch, int j) {
  return j == 6 ? 1 : arch.channels[5 - j];
}

constexpr int kConvLayers = 7;
constexpr int kTrunkLayers = 4;

std::size_t entry_count(const ArchConfig& arch) {
  return static_cast<std::size_t>(arch.l_max) * kConvLayers * 2 +
         kTrunkLayers * 2;
}

std::size_t enc_conv_entry(int depth, int layer) {
  return static_cast<std::size_t>(depth - 1) * kConvLayers + layer;
}
std::size_t enc_trunk_entry(const ArchConfig& arch, int i) {
  return static_cast<std::size_t>(arch.l_max) * kConvLayers + i;
}
std::size_t dec_trunk_entry(const ArchConfig& arch, int i) {
  return enc_trunk_entry(arch, kTrunkLayers) + i;
}
std::size_t dec_conv_entry(const ArchConfig& arch, int depth, int layer) {
  return dec_trunk_entry(arch, kTrunkLayers) +
         static_cast<std::size_t>(depth - 1) * kConvLayers + layer;
}

}  // namespace

std::vector<std::pair<std::string, diff::Tensor*>>
AutoencoderParams::tensor_entries() {
  std::vector<std::pair<std::string, diff::Tensor*>> out;
  out.reserve(entry_count(arch));
  for (int l = 1; l <= arch.l_max; ++l) {
    for (int j = 0; j < kConvLayers; ++j) {
      out.emplace_back("enc" + std::to_string(l) + ".conv" + std::to_string(j),
                       &enc_convs[l - 1][j]);
    }
  }
  for (int i = 0; i < kTrunkLayers; ++i) {
    out.emplace_back("enc_trunk.fc" + std::to_string(i), &enc_trunk[i]);
  }
  for (int i = 0; i < kTrunkLayers; ++i) {
    out.emplace_back("dec_trunk.fc" + std::to_string(i), &dec_trunk[i]);
  }
  for (int l = 1; l <= arch.l_max; ++l) {
    for (int j = 0; j < kConvLayers; ++j) {
      out.emplace_back("dec" + std::to_string(l) + ".conv" + std::to_string(j),
                       &dec_convs[l - 1][j]);
    }
  }
  return out;
}

std::vector<std::pair<std::string, const diff::Tensor*>>
AutoencoderParams::tensor_entries() const {
  auto mutable_entries = const_cast<AutoencoderParams*>(this)->tensor_entries();
  std::vector<std::pair<std::string, const diff::Tensor*>> out;
  out.reserve(mutable_entries.size());
  for (auto& [name, t] : mutable_entries) out.emplace_back(name, t);
  return out;
}

std::size_t AutoencoderParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensor_entries()) n += t->size();
  return n;
}

AutoencoderParams init_params(const ArchConfig& arch, std::uint64_t seed) {
  check_valid(arch);
  AutoencoderParams p;
  p.arch = arch;

  const std::vector<int>& tw = arch.trunk_widths;
  const std::size_t trunk_in = arch.trunk_input_size();
  const std::vector<std::size_t> enc_widths = {
      trunk_in, static_cast<std::size_t>(tw[0]),
      static_cast<std::size_t>(tw[1]), static_cast<std::size_t>(tw[2]),
      static_cast<std::size_t>(arch.d_z)};

  auto fill_uniform = [](diff::Tensor& t, double bound, util::Rng& rng) {
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
  };

  std::size_t entry = 0;
  auto next_rng = [&] { return util::Rng(util::derive_seed(seed, entry++)); };

  p.enc_convs.resize(arch.l_max);
  for (int l = 1; l <= arch.l_max; ++l) {
    for (int j = 0; j < kConvLayers; ++j) {
      const int cin = enc_in_channels(arch, j);
      diff::Tensor k({static_cast<std::size_t>(arch.channels[j]),
                      static_cast<std::size_t>(cin), 3, 3});
      util::Rng rng = next_rng();
      fill_uniform(k, std::sqrt(6.0 / (cin * 9.0)), rng);
      p.enc_convs[l - 1].push_back(std::move(k));
    }
  }
  for (int i = 0; i < kTrunkLayers; ++i) {
    diff::Tensor w({enc_widths[i], enc_widths[i + 1]});
    util::Rng rng = next_rng();
    fill_uniform(w, std::sqrt(6.0 / static_cast<double>(enc_widths[i])), rng);
    p.enc_trunk.push_back(std::move(w));
  }
  for (int i = 0; i < kTrunkLayers; ++i) {
    const std::size_t in = enc_widths[kTrunkLayers - i];
    const std::size_t out = enc_widths[kTrunkLayers - i - 1];
    diff::Tensor w({in, out});
    util::Rng rng = next_rng();
    fill_uniform(w, std::sqrt(6.0 / static_cast<double>(in)), rng);
    p.dec_trunk.push_back(std::move(w));
  }
  p.dec_convs.resize(arch.l_max);
  for (int l = 1; l <= arch.l_max; ++l) {
    for (int j = 0; j < kConvLayers; ++j) {
      const int cin = dec_in_channels(arch, j);
      const int cout = dec_out_channels(arch, j);
      diff::Tensor k({static_cast<std::size_t>(cin),
                      static_cast<std::size_t>(cout), 3, 3});
      util::Rng rng = next_rng();
      fill_uniform(k, std::sqrt(6.0 / (cin * 9.0)), rng);
      p.dec_convs[l - 1].push_back(std::move(k));
    }
  }
  return p;
}

// --- Binder -----------------------------------------------------------------

Binder::Binder(diff::Tape& tape_in, const AutoencoderParams& params_in,
               std::vector<diff::Tensor>* sinks)
    : tape(tape_in), params(params_in), sinks_(sinks) {
  cache_.resize(entry_count(params.arch));
  if (sinks_ && sinks_->size() != cache_.size()) {
    throw ConfigError("binder: sink count does not match tensor entries");
  }
}

diff::Var Binder::bind(std::size_t entry, const diff::Tensor* tensor) {
  if (!cache_[entry].valid()) {
    cache_[entry] = sinks_ ? tape.param(tensor, &(*sinks_)[entry])
                           : tape.constant_ref(tensor);
  }
  return cache_[entry];
}

diff::Var Binder::enc_conv(int depth, int layer) {
  return bind(enc_conv_entry(depth, layer),
              &params.enc_convs[depth - 1][layer]);
}
diff::Var Binder::enc_trunk(int i) {
  return bind(enc_trunk_entry(params.arch, i), &params.enc_trunk[i]);
}
diff::Var Binder::dec_trunk(int i) {
  return bind(dec_trunk_entry(params.arch, i), &params.dec_trunk[i]);
}
diff::Var Binder::dec_conv(int depth, int layer) {
  return bind(dec_conv_entry(params.arch, depth, layer),
              &params.dec_convs[depth - 1][layer]);
}

// --- Graph builders -----------------------------------------------------------

diff::Tensor encoder_input(const ArchConfig& arch, const net::MlpSpec& spec) {
  const net::MlpMatrix m = net::to_matrix(spec, arch.l_max, arch.n_max);
  diff::Tensor values = m.values;
  const double s = arch.effective_input_scale();
  const std::size_t weight_cols =
      static_cast<std::size_t>(spec.depth() + 1) * arch.n_max;
  for (std::size_t r = 0; r < values.dim(0); ++r) {
    for (std::size_t c = 0; c < weight_cols; ++c) values.at(r, c) *= s;
  }
  return values;
}

diff::Var build_encoder(Binder& b, diff::Var matrix, int depth) {
  const ArchConfig& arch = b.params.arch;
  if (depth < 1 || depth > arch.l_max) {
    throw ConfigError("encode: depth " + std::to_string(depth) +
                      " out of [1, " + std::to_string(arch.l_max) + "]");
  }
  const std::size_t cols = net::matrix_cols(depth, arch.n_max);
  if (matrix.value().rank() != 2 ||
      matrix.value().dim(0) != static_cast<std::size_t>(arch.n_max) ||
      matrix.value().dim(1) != cols) {
    throw ShapeError("encode: matrix shape " +
                     diff::shape_str(matrix.value().shape()) +
                     " does not fit depth " + std::to_string(depth));
  }
  diff::Tape& t = b.tape;

  diff::Var x = t.reshape(
      matrix, {1, static_cast<std::size_t>(arch.n_max), cols});
  for (int j = 0; j < kConvLayers; ++j) {
    x = t.conv2d(x, b.enc_conv(depth, j));
    if (j + 1 < kConvLayers) x = t.leaky_relu(x, arch.leaky_slope);
  }

  // Multiplexer: only the matching stack runs, the rest contribute zeros.
  std::vector<diff::Var> segments;
  for (int l = 1; l <= arch.l_max; ++l) {
    if (l == depth) {
      segments.push_back(t.reshape(x, {arch.flat_size(l)}));
    } else {
      segments.push_back(t.constant(diff::Tensor::zeros({arch.flat_size(l)})));
    }
  }
  diff::Var h = t.reshape(t.concat(segments), {1, arch.trunk_input_size()});
  for (int i = 0; i < kTrunkLayers; ++i) {
    h = t.matmul(h, b.enc_trunk(i));
    if (i + 1 < kTrunkLayers) h = t.leaky_relu(h, arch.leaky_slope);
  }
  return t.reshape(h, {static_cast<std::size_t>(arch.d_z)});
}

namespace {

DecodedVar run_decoder_stack(Binder& b, diff::Var flat, int depth) {
  const ArchConfig& arch = b.params.arch;
  diff::Tape& t = b.tape;
  const std::size_t n = static_cast<std::size_t>(arch.n_max);
  const std::size_t cols = net::matrix_cols(depth, arch.n_max);

  std::size_t offset = 0;
  for (int l = 1; l < depth; ++l) offset += arch.flat_size(l);
  diff::Var sub = t.slice1d(flat, offset, offset + arch.flat_size(depth));
  diff::Var x = t.reshape(
      sub, {static_cast<std::size_t>(arch.channels.back()), n, cols});
  for (int j = 0; j < kConvLayers; ++j) {
    x = t.conv2d_transpose(x, b.dec_conv(depth, j));
    if (j + 1 < kConvLayers) x = t.leaky_relu(x, arch.leaky_slope);
  }
  diff::Var m = t.reshape(x, {n, cols});

  DecodedVar d;
  d.depth = depth;
  d.weights = t.slice2d(m, 0, n, 0, static_cast<std::size_t>(depth + 1) * n);
  d.gates = t.sigmoid(
      t.slice2d(m, 0, n, static_cast<std::size_t>(depth + 1) * n, cols));
  return d;
}

diff::Var expand_trunk(Binder& b, diff::Var z) {
  const ArchConfig& arch = b.params.arch;
  diff::Tape& t = b.tape;
  if (z.value().size() != static_cast<std::size_t>(arch.d_z)) {
    throw ShapeError("decode: embedding length " +
                     std::to_string(z.value().size()) + ", expected " +
                     std::to_string(arch.d_z));
  }
  diff::Var h = t.reshape(z, {1, static_cast<std::size_t>(arch.d_z)});
  for (int i = 0; i < kTrunkLayers; ++i) {
    h = t.matmul(h, b.dec_trunk(i));
    if (i + 1 < kTrunkLayers) h = t.leaky_relu(h, arch.leaky_slope);
  }
  return t.reshape(h, {arch.trunk_input_size()});
}

}  // namespace

std::vector<DecodedVar> build_decoder(Binder& b, diff::Var z) {
  diff::Var flat = expand_trunk(b, z);
  std::vector<DecodedVar> out;
  for (int l = 1; l <= b.params.arch.l_max; ++l) {
    out.push_back(run_decoder_stack(b, flat, l));
  }
  return out;
}

DecodedVar build_decoder_single(Binder& b, diff::Var z, int depth) {
  if (depth < 1 || depth > b.params.arch.l_max) {
    throw ConfigError("decode: depth out of range");
  }
  return run_decoder_stack(b, expand_trunk(b, z), depth);
}

diff::Var build_soft_predict(Binder& b, const DecodedVar& d, diff::Var X) {
  const ArchConfig& arch = b.params.arch;
  diff::Tape& t = b.tape;
  const std::size_t n = static_cast<std::size_t>(arch.n_max);
  if (X.value().rank() != 2 ||
      X.value().dim(1) != static_cast<std::size_t>(arch.input_dim)) {
    throw ShapeError("soft_predict: inputs must be [N, input_dim]");
  }

  diff::Var h = X;
  for (int k = 0; k <= d.depth; ++k) {
    const std::size_t rows =
        k == 0 ? static_cast<std::size_t>(arch.input_dim) : n;
    const std::size_t cols_k =
        k == d.depth ? static_cast<std::size_t>(arch.output_dim) : n;
    diff::Var w = t.slice2d(d.weights, 0, rows, k * n, k * n + cols_k);
    h = t.matmul(h, w);
    if (k < d.depth) {
      switch (arch.activation) {
        case net::Activation::kSigmoid: h = t.sigmoid(h); break;
        case net::Activation::kLeakyRelu:
          h = t.leaky_relu(h, net::kMlpLeakySlope);
          break;
        case net::Activation::kLinear: break;
      }
      diff::Var gate = t.reshape(
          t.slice2d(d.gates, 0, n, static_cast<std::size_t>(k),
                    static_cast<std::size_t>(k) + 1),
          {n});
      h = t.scale_cols(h, gate);
    } else if (arch.activation != net::Activation::kSigmoid) {
      h = t.sigmoid(h);
    }
  }
  return h;
}

diff::Var build_gated_weights(Binder& b, const DecodedVar& d) {
  const ArchConfig& arch = b.params.arch;
  diff::Tape& t = b.tape;
  const std::size_t n = static_cast<std::size_t>(arch.n_max);

  auto gate = [&](int k) {
    return t.reshape(t.slice2d(d.gates, 0, n, static_cast<std::size_t>(k),
                               static_cast<std::size_t>(k) + 1),
                     {n});
  };

  std::vector<diff::Var> pieces;
  for (int k = 0; k <= d.depth; ++k) {
    const std::size_t rows =
        k == 0 ? static_cast<std::size_t>(arch.input_dim) : n;
    const std::size_t cols_k =
        k == d.depth ? static_cast<std::size_t>(arch.output_dim) : n;
    diff::Var w = t.slice2d(d.weights, 0, rows, k * n, k * n + cols_k);
    if (k > 0) w = t.scale_rows(w, gate(k - 1));
    if (k < d.depth) w = t.scale_cols(w, gate(k));
    pieces.push_back(t.reshape(w, {rows * cols_k}));
  }
  return t.concat(pieces);
}

net::MlpMatrix materialize_matrix(const ArchConfig& arch, const DecodedVar& d) {
  const std::size_t n = static_cast<std::size_t>(arch.n_max);
  const std::size_t cols = net::matrix_cols(d.depth, arch.n_max);
  const diff::Tensor& w = d.weights.value();
  const diff::Tensor& g = d.gates.value();

  net::MlpMatrix m;
  m.n_max = arch.n_max;
  m.values = diff::Tensor({n, cols});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < w.dim(1); ++c) m.values.at(r, c) = w.at(r, c);
    for (std::size_t k = 0; k < g.dim(1); ++k) {
      m.values.at(r, w.dim(1) + k) = g.at(r, k);
    }
  }
  return m;
}

// --- Plain entry points ----------------------------------------------------------

std::vector<double> encode(const AutoencoderParams& params,
                           const net::MlpSpec& spec) {
  diff::Tape tape;
  Binder binder(tape, params);
  const diff::Tensor input = encoder_input(params.arch, spec);
  diff::Var z = build_encoder(binder, tape.constant(input), spec.depth());
  const diff::Tensor& zv = z.value();
  return std::vector<double>(zv.data().begin(), zv.data().end());
}

std::vector<net::MlpSpec> decode_all(const AutoencoderParams& params,
                                     std::span<const double> z, bool soft) {
  diff::Tape tape;
  Binder binder(tape, params);
  diff::Var zv = tape.constant(diff::Tensor(
      {z.size()}, std::vector<double>(z.begin(), z.end())));
  std::vector<net::MlpSpec> out;
  for (const DecodedVar& d : build_decoder(binder, zv)) {
    const net::MlpMatrix m = materialize_matrix(params.arch, d);
    const net::MatrixMeta meta{params.arch.activation, params.arch.input_dim,
                               params.arch.output_dim, d.depth,
                               params.arch.n_max};
    out.push_back(net::from_matrix(m, meta, soft));
  }
  return out;
}

std::vector<double> decoder_sq_errors(const AutoencoderParams& params,
                                      const net::MlpSpec& spec,
                                      const diff::Tensor& X,
                                      const diff::Tensor& Y) {
  diff::Tape tape;
  Binder binder(tape, params);
  const diff::Tensor input = encoder_input(params.arch, spec);
  diff::Var z = build_encoder(binder, tape.constant(input), spec.depth());
  diff::Var xv = tape.constant_ref(&X);
  diff::Var yv = tape.constant_ref(&Y);
  std::vector<double> out;
  for (const DecodedVar& d : build_decoder(binder, z)) {
    diff::Var pred = build_soft_predict(binder, d, xv);
    diff::Var err = tape.sub(pred, yv);
    out.push_back(tape.sum(tape.mul(err, err)).value()[0]);
  }
  return out;
}

}  // namespace funcspace::ae
