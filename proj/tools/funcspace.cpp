// funcspace: generate sparse random MLP corpora, train the multi-scale
// autoencoder on functional similarity, evaluate reconstruction grids, and
// search the embedding space for compact networks fitting a dataset.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "funcspace/autoencoder.hpp"
#include "funcspace/errors.hpp"
#include "funcspace/generate.hpp"
#include "funcspace/manifest.hpp"
#include "funcspace/metrics.hpp"
#include "funcspace/mlp.hpp"
#include "funcspace/parallel.hpp"
#include "funcspace/search.hpp"
#include "funcspace/serialize.hpp"
#include "funcspace/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
namespace fsp = funcspace;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string fmt_percent(double ratio) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.2f", ratio * 100.0);
  return buf;
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double ms() const {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// --- Configuration file ---------------------------------------------------------

// Defaults mirroring the generation, training and search configs; a JSON
// config file may override them section by section, and command-line flags
// override the file.
struct CliDefaults {
  fsp::gen::GenConfig gen;
  fsp::ae::TrainConfig train;
  int d_z = 64;
  std::vector<int> trunk_widths = {256, 128, 64};
  double input_scale = 0.0;
  std::string loss_text = "min";
  fsp::emb::SearchConfig search;
  std::string decoders_text;  // comma list; empty = all
};

void reject_unknown_keys(const json& section, const char* name,
                         std::initializer_list<const char*> known) {
  for (const auto& [key, value] : section.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) {
          return key == k;
        }) == known.end()) {
      throw fsp::ConfigError(std::string("config: unknown key \"") + key +
                             "\" in section \"" + name + "\"");
    }
  }
}

template <typename T>
void maybe(const json& section, const char* key, T& target) {
  if (section.contains(key)) target = section.at(key).get<T>();
}

CliDefaults load_defaults(const std::string& config_path) {
  CliDefaults d;
  d.search.val_interval = 0;
  if (config_path.empty()) return d;

  std::ifstream in(config_path);
  if (!in) throw fsp::IoError("cannot open config " + config_path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw fsp::ConfigError("config: malformed JSON: " + std::string(e.what()));
  }
  reject_unknown_keys(doc, "(root)", {"gen", "train", "search"});

  if (doc.contains("gen")) {
    const json& g = doc.at("gen");
    reject_unknown_keys(g, "gen",
                        {"activation", "input_dim", "output_dim", "n_max",
                         "l_max", "hidden_min", "hidden_max",
                         "removal_fractions", "weight_range"});
    if (g.contains("activation")) {
      d.gen.activation = fsp::net::parse_activation(g.at("activation"));
    }
    maybe(g, "input_dim", d.gen.input_dim);
    maybe(g, "output_dim", d.gen.output_dim);
    maybe(g, "n_max", d.gen.n_max);
    maybe(g, "l_max", d.gen.l_max);
    maybe(g, "hidden_min", d.gen.hidden_min);
    maybe(g, "hidden_max", d.gen.hidden_max);
    maybe(g, "removal_fractions", d.gen.removal_fractions);
    maybe(g, "weight_range", d.gen.weight_range);
  }
  if (doc.contains("train")) {
    const json& t = doc.at("train");
    reject_unknown_keys(t, "train",
                        {"batch", "epochs", "lr", "loss", "d_z",
                         "trunk_widths", "input_scale"});
    maybe(t, "batch", d.train.batch);
    maybe(t, "epochs", d.train.epochs);
    maybe(t, "lr", d.train.lr);
    maybe(t, "loss", d.loss_text);
    maybe(t, "d_z", d.d_z);
    maybe(t, "trunk_widths", d.trunk_widths);
    maybe(t, "input_scale", d.input_scale);
  }
  if (doc.contains("search")) {
    const json& s = doc.at("search");
    reject_unknown_keys(s, "search",
                        {"iters", "lr_z", "lr_t", "alpha", "minibatch",
                         "restarts", "decoders", "val_interval"});
    maybe(s, "iters", d.search.iterations);
    maybe(s, "lr_z", d.search.lr_z);
    maybe(s, "lr_t", d.search.lr_t);
    maybe(s, "alpha", d.search.alpha);
    maybe(s, "minibatch", d.search.minibatch);
    maybe(s, "restarts", d.search.restarts);
    maybe(s, "val_interval", d.search.val_interval);
    if (s.contains("decoders")) {
      const auto list = s.at("decoders").get<std::vector<int>>();
      std::string text;
      for (int v : list) {
        if (!text.empty()) text += ",";
        text += std::to_string(v);
      }
      d.decoders_text = text;
    }
  }
  return d;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t next = text.find(',', pos);
    if (next == std::string::npos) next = text.size();
    out.push_back(std::stoi(text.substr(pos, next - pos)));
    pos = next + 1;
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t next = text.find(',', pos);
    if (next == std::string::npos) next = text.size();
    out.push_back(std::stod(text.substr(pos, next - pos)));
    pos = next + 1;
  }
  return out;
}

json gen_config_json(const fsp::gen::GenConfig& g) {
  json j;
  j["activation"] = fsp::net::activation_name(g.activation);
  j["input_dim"] = g.input_dim;
  j["output_dim"] = g.output_dim;
  j["n_max"] = g.n_max;
  j["l_max"] = g.l_max;
  j["hidden_min"] = g.hidden_min;
  j["hidden_max"] = g.hidden_max;
  j["removal_fractions"] = g.removal_fractions;
  j["weight_range"] = g.weight_range;
  if (g.fixed_depth) j["fixed_depth"] = *g.fixed_depth;
  return j;
}

std::string spec_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "mlp_%05zu.json", index);
  return buf;
}

std::vector<fs::path> list_spec_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("mlp_", 0) == 0 && entry.path().extension() == ".json") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

// --- Subcommand bodies -------------------------------------------------------------

struct GenMlpsArgs {
  std::string activation;
  std::size_t count = 0;
  std::string out;
  std::uint64_t seed = 1;
  fsp::gen::GenConfig gen;
  int fixed_depth = 0;
};

int run_gen_mlps(GenMlpsArgs& args) {
  Stopwatch total;
  args.gen.activation = fsp::net::parse_activation(args.activation);
  args.gen.seed = args.seed;
  if (args.fixed_depth > 0) args.gen.fixed_depth = args.fixed_depth;
  if (args.count == 0) throw fsp::ConfigError("gen-mlps: count must be > 0");

  const fs::path dir(args.out);
  fs::create_directories(dir);

  Stopwatch gen_time;
  const fsp::gen::Corpus corpus = fsp::gen::gen_corpus(args.gen, args.count);

  fsp::io::RunManifest manifest;
  manifest.command = "gen-mlps";
  manifest.config = {{"gen", gen_config_json(args.gen)},
                     {"count", args.count}};
  manifest.seed = args.seed;
  manifest.threads = fsp::util::thread_count();

  for (std::size_t i = 0; i < corpus.items.size(); ++i) {
    const fs::path file = dir / spec_file_name(i);
    fsp::io::save_mlp(corpus.items[i].spec, file);
    manifest.add_output(file);
  }
  fsp::gen::FunctionalDataset grid_ds;
  grid_ds.inputs = corpus.grid;
  grid_ds.train_count = corpus.grid.dim(0);
  const fs::path grid_file = dir / "grid.fds";
  fsp::io::save_dataset(grid_ds, grid_file);
  manifest.add_output(grid_file);

  manifest.timings_ms.emplace_back("generate", gen_time.ms());
  manifest.timings_ms.emplace_back("total", total.ms());
  fsp::io::write_run_manifest(dir / "run_manifest.json", manifest);
  std::cout << "wrote " << corpus.items.size() << " specs to " << dir.string()
            << "\n";
  return kExitOk;
}

struct GenDatasetArgs {
  std::string mlp_file;
  std::size_t rows = 100000;
  std::string ratio = "5:3:2";
  std::string out;
  std::uint64_t seed = 1;
};

int run_gen_dataset(GenDatasetArgs& args) {
  Stopwatch total;
  std::array<int, 3> ratio{};
  if (std::sscanf(args.ratio.c_str(), "%d:%d:%d", &ratio[0], &ratio[1],
                  &ratio[2]) != 3) {
    throw fsp::ConfigError("gen-dataset: ratio must look like 5:3:2");
  }

  fsp::io::RunManifest manifest;
  manifest.command = "gen-dataset";
  manifest.seed = args.seed;
  manifest.threads = fsp::util::thread_count();
  manifest.config = {{"rows", args.rows}, {"ratio", args.ratio}};
  manifest.add_input(args.mlp_file);

  const auto spec = fsp::io::load_mlp(args.mlp_file);
  fsp::util::Rng rng(args.seed);
  const auto ds = fsp::gen::make_search_dataset(spec, args.rows, ratio, rng);
  fsp::io::save_dataset(ds, args.out);
  manifest.add_output(args.out);
  manifest.timings_ms.emplace_back("total", total.ms());
  fsp::io::write_run_manifest(fs::path(args.out).parent_path() /
                                  "run_manifest.json",
                              manifest);
  std::cout << "wrote " << ds.rows() << " rows (" << ds.train_count << "/"
            << ds.val_count << "/" << ds.test_count << ") to " << args.out
            << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string data_dir;
  std::string out;
  std::string loss_text = "min";
  fsp::ae::TrainConfig train;
  int d_z = 64;
  std::vector<int> trunk_widths = {256, 128, 64};
  double input_scale = 0.0;
  int l_max_override = 0;
  std::uint64_t seed = 1;
};

int run_train(TrainArgs& args) {
  Stopwatch total;
  args.train.loss = fsp::ae::LossSpec::parse(args.loss_text);
  args.train.seed = args.seed;
  fsp::ae::check_valid(args.train);

  fsp::io::RunManifest manifest;
  manifest.command = "train-ae";
  manifest.seed = args.seed;
  manifest.threads = fsp::util::thread_count();

  // corpus from spec files + shared grid; outputs recomputed on load
  Stopwatch load_time;
  const fs::path dir(args.data_dir);
  const auto spec_files = list_spec_files(dir);
  if (spec_files.empty()) {
    throw fsp::ConfigError("train-ae: no mlp_*.json files in " +
                           dir.string());
  }
  const fs::path grid_file = dir / "grid.fds";
  manifest.add_input(grid_file);
  fsp::gen::Corpus corpus;
  corpus.grid = fsp::io::load_dataset(grid_file).inputs;
  corpus.items.resize(spec_files.size());
  fsp::util::parallel_for(spec_files.size(), [&](std::size_t i) {
    corpus.items[i].spec = fsp::io::load_mlp(spec_files[i]);
    corpus.items[i].outputs =
        fsp::gen::make_functional_dataset(corpus.items[i].spec, corpus.grid)
            .outputs;
  });
  for (const auto& file : spec_files) manifest.add_input(file);

  fsp::ae::ArchConfig arch;
  arch.activation = corpus.items.front().spec.activation;
  arch.input_dim = corpus.items.front().spec.input_dim;
  arch.output_dim = corpus.items.front().spec.output_dim;
  arch.n_max = corpus.items.front().spec.n_max();
  arch.d_z = args.d_z;
  arch.trunk_widths = args.trunk_widths;
  arch.input_scale = args.input_scale;
  int max_depth = 1;
  for (const auto& item : corpus.items) {
    max_depth = std::max(max_depth, item.spec.depth());
    if (item.spec.activation != arch.activation) {
      throw fsp::ConfigError("train-ae: corpus mixes activation kinds");
    }
  }
  arch.l_max = args.l_max_override > 0 ? args.l_max_override : max_depth;

  manifest.config = {{"train",
                      {{"batch", args.train.batch},
                       {"epochs", args.train.epochs},
                       {"lr", args.train.lr},
                       {"loss", args.train.loss.str()},
                       {"d_z", arch.d_z},
                       {"trunk_widths", arch.trunk_widths},
                       {"input_scale", arch.input_scale},
                       {"l_max", arch.l_max}}},
                     {"corpus_size", corpus.items.size()}};
  manifest.timings_ms.emplace_back("load", load_time.ms());

  fsp::ae::AutoencoderParams params = fsp::ae::init_params(arch, args.seed);

  const fs::path out_dir(args.out);
  fs::create_directories(out_dir);
  std::string log_csv = "epoch,mean_loss\n";

  Stopwatch train_time;
  const auto log = fsp::ae::train_autoencoder(
      args.train, corpus, params,
      [&](int epoch, double mean_loss, const fsp::ae::AutoencoderParams& p) {
        fsp::io::save_checkpoint(p, out_dir);
        log_csv += std::to_string(epoch) + "," + fmt(mean_loss) + "\n";
        std::cout << "epoch " << epoch << " mean loss " << fmt(mean_loss)
                  << std::endl;
      });
  manifest.timings_ms.emplace_back("train", train_time.ms());

  if (log.diverged) {
    fsp::io::write_text_file(out_dir / "train_log.csv", log_csv);
    std::cerr << "training diverged after " << log.epochs_completed
              << " completed epochs; last checkpoint retained\n";
    return kExitNumerical;
  }

  // final save carries the embedding statistics
  fsp::io::save_checkpoint(params, out_dir);
  fsp::io::write_text_file(out_dir / "train_log.csv", log_csv);
  manifest.add_output(out_dir / "manifest.json");
  manifest.add_output(out_dir / "tensors.bin");
  manifest.add_output(out_dir / "train_log.csv");
  manifest.timings_ms.emplace_back("total", total.ms());
  fsp::io::write_run_manifest(out_dir / "run_manifest.json", manifest);
  return kExitOk;
}

struct EvalArgs {
  std::string ckpt;
  std::size_t count = 1000;
  std::string out;
  std::uint64_t seed = 1;
  bool baseline = false;
  fsp::gen::GenConfig gen;
};

int run_eval(EvalArgs& args) {
  Stopwatch total;
  fsp::io::RunManifest manifest;
  manifest.command = "eval-ae";
  manifest.seed = args.seed;
  manifest.threads = fsp::util::thread_count();
  manifest.add_input(fs::path(args.ckpt) / "manifest.json");
  manifest.add_input(fs::path(args.ckpt) / "tensors.bin");

  fsp::ae::AutoencoderParams params = fsp::io::load_checkpoint(args.ckpt);
  if (args.baseline) {
    // untrained reference with the same architecture
    params = fsp::ae::init_params(params.arch,
                                  fsp::util::derive_seed(args.seed, 0xba5e));
  }

  fsp::gen::GenConfig gen = args.gen;
  gen.activation = params.arch.activation;
  gen.input_dim = params.arch.input_dim;
  gen.output_dim = params.arch.output_dim;
  gen.n_max = params.arch.n_max;
  gen.l_max = params.arch.l_max;
  gen.hidden_max = std::min(gen.hidden_max, gen.n_max);
  gen.hidden_min = std::min(gen.hidden_min, gen.hidden_max);

  std::vector<std::vector<fsp::gen::CorpusItem>> by_depth;
  fsp::diff::Tensor grid;
  for (int depth = 1; depth <= params.arch.l_max; ++depth) {
    gen.fixed_depth = depth;
    gen.seed = fsp::util::derive_seed(args.seed,
                                      static_cast<std::uint64_t>(depth));
    fsp::gen::Corpus corpus = fsp::gen::gen_corpus(gen, args.count);
    grid = corpus.grid;
    by_depth.push_back(std::move(corpus.items));
  }

  Stopwatch eval_time;
  const auto table = fsp::ae::eval_mpe_grid(params, by_depth, grid);
  manifest.timings_ms.emplace_back("eval", eval_time.ms());

  std::string csv = "decoder";
  for (int e = 1; e <= table.l_max; ++e) csv += ",E" + std::to_string(e);
  csv += "\n";
  for (int d = 1; d <= table.l_max; ++d) {
    csv += "D" + std::to_string(d);
    for (int e = 1; e <= table.l_max; ++e) {
      csv += "," + fmt(table.cells[d - 1][e - 1]);
    }
    csv += "\n";
  }
  fsp::io::write_text_file(args.out, csv);
  manifest.add_output(args.out);
  manifest.config = {{"count", args.count},
                     {"baseline", args.baseline},
                     {"gen", gen_config_json(gen)}};
  manifest.timings_ms.emplace_back("total", total.ms());
  fsp::io::write_run_manifest(fs::path(args.out).parent_path() /
                                  "run_manifest.json",
                              manifest);
  std::cout << csv;
  return kExitOk;
}

struct SearchArgs {
  std::string ckpt;
  std::string data;
  std::string out;
  std::uint64_t seed = 1;
  fsp::emb::SearchConfig search;
  std::string decoders_text;
};

fsp::emb::SearchConfig make_search_config(const SearchArgs& args) {
  fsp::emb::SearchConfig cfg = args.search;
  cfg.seed = args.seed;
  if (!args.decoders_text.empty()) {
    cfg.decoders = parse_int_list(args.decoders_text);
  }
  return cfg;
}

json search_config_json(const fsp::emb::SearchConfig& cfg) {
  return {{"iters", cfg.iterations},
          {"lr_z", cfg.lr_z},
          {"lr_t", cfg.lr_t},
          {"alpha", cfg.alpha},
          {"minibatch", cfg.minibatch},
          {"restarts", cfg.restarts},
          {"decoders", cfg.decoders},
          {"val_interval", cfg.val_interval}};
}

int run_search(SearchArgs& args) {
  Stopwatch total;
  fsp::io::RunManifest manifest;
  manifest.command = "search";
  manifest.seed = args.seed;
  manifest.threads = fsp::util::thread_count();
  manifest.add_input(fs::path(args.ckpt) / "manifest.json");
  manifest.add_input(fs::path(args.ckpt) / "tensors.bin");
  manifest.add_input(args.data);

  const auto params = fsp::io::load_checkpoint(args.ckpt);
  const auto dataset = fsp::io::load_dataset(args.data);
  const auto cfg = make_search_config(args);
  manifest.config = {{"search", search_config_json(cfg)}};

  Stopwatch search_time;
  const auto result = fsp::emb::search_optimal(params, dataset, cfg);
  manifest.timings_ms.emplace_back("search", search_time.ms());

  const fs::path out_dir(args.out);
  fs::create_directories(out_dir);
  std::string csv = "decoder,mpe,nonzero,summary\n";
  for (const auto& r : result.per_decoder) {
    // Summary column follows the "MPE (non-zero count)" convention with
    // MPE in percent.
    csv += "D" + std::to_string(r.decoder) + "," + fmt(r.test_mpe) + "," +
           std::to_string(r.non_zero) + "," + fmt_percent(r.test_mpe) + " (" +
           std::to_string(r.non_zero) + ")\n";
    const fs::path spec_file =
        out_dir / ("decoder_" + std::to_string(r.decoder) + ".json");
    fsp::io::save_mlp(r.spec, spec_file);
    manifest.add_output(spec_file);
  }
  fsp::io::write_text_file(out_dir / "summary.csv", csv);
  manifest.add_output(out_dir / "summary.csv");
  manifest.timings_ms.emplace_back("total", total.ms());
  fsp::io::write_run_manifest(out_dir / "run_manifest.json", manifest);
  std::cout << csv;
  return kExitOk;
}

struct ScanArgs {
  SearchArgs base;
  std::string alphas_text;
  int decoder = 1;
};

int run_scan(ScanArgs& args) {
  Stopwatch total;
  fsp::io::RunManifest manifest;
  manifest.command = "scan-alpha";
  manifest.seed = args.base.seed;
  manifest.threads = fsp::util::thread_count();
  manifest.add_input(fs::path(args.base.ckpt) / "manifest.json");
  manifest.add_input(fs::path(args.base.ckpt) / "tensors.bin");
  manifest.add_input(args.base.data);

  const auto params = fsp::io::load_checkpoint(args.base.ckpt);
  const auto dataset = fsp::io::load_dataset(args.base.data);
  const auto alphas = parse_double_list(args.alphas_text);
  const auto cfg = make_search_config(args.base);
  manifest.config = {{"search", search_config_json(cfg)},
                     {"alphas", alphas},
                     {"decoder", args.decoder}};

  const auto curve =
      fsp::emb::tradeoff_scan(params, dataset, args.decoder, alphas, cfg);

  const fs::path out_dir(args.base.out);
  fs::create_directories(out_dir);
  std::string csv = "alpha,nonzero,mpe\n";
  for (const auto& pt : curve.points) {
    csv += fmt(pt.alpha) + "," + std::to_string(pt.non_zero) + "," +
           fmt(pt.mpe) + "\n";
  }
  fsp::io::write_text_file(out_dir / "tradeoff.csv", csv);
  manifest.add_output(out_dir / "tradeoff.csv");
  manifest.timings_ms.emplace_back("total", total.ms());
  fsp::io::write_run_manifest(out_dir / "run_manifest.json", manifest);
  std::cout << csv;
  return kExitOk;
}

struct SurfaceArgs {
  std::vector<std::string> mlp_files;
  std::string fix = "dim=3,value=0.5";
  int grid = 50;
  std::string out;
};

int run_surface(SurfaceArgs& args) {
  Stopwatch total;
  if (args.mlp_files.size() != 2) {
    throw fsp::ConfigError("export-surface: exactly two --mlp files required");
  }
  int dim = 0;
  double value = 0.0;
  if (std::sscanf(args.fix.c_str(), "dim=%d,value=%lf", &dim, &value) != 2) {
    throw fsp::ConfigError(
        "export-surface: --fix must look like dim=3,value=0.5");
  }
  if (dim < 1 || dim > 3) {
    throw fsp::ConfigError("export-surface: dim must be 1, 2 or 3");
  }

  fsp::io::RunManifest manifest;
  manifest.command = "export-surface";
  manifest.threads = fsp::util::thread_count();
  manifest.config = {{"fix", args.fix}, {"grid", args.grid}};
  manifest.add_input(args.mlp_files[0]);
  manifest.add_input(args.mlp_files[1]);

  const auto spec_a = fsp::io::load_mlp(args.mlp_files[0]);
  const auto spec_b = fsp::io::load_mlp(args.mlp_files[1]);
  const auto rows =
      fsp::ae::export_surface(spec_a, spec_b, dim - 1, value, args.grid);

  std::string csv = "x1,x2,ya,yb\n";
  for (const auto& r : rows) {
    csv += fmt(r.x1) + "," + fmt(r.x2) + "," + fmt(r.ya) + "," + fmt(r.yb) +
           "\n";
  }
  fsp::io::write_text_file(args.out, csv);
  manifest.add_output(args.out);
  manifest.timings_ms.emplace_back("total", total.ms());
  fsp::io::write_run_manifest(fs::path(args.out).parent_path() /
                                  "run_manifest.json",
                              manifest);
  std::cout << "wrote " << rows.size() << " rows to " << args.out << "\n";
  return kExitOk;
}

struct AuditArgs {
  std::string dir;
  std::vector<std::string> mlp_files;
  double weight_range = 0.0;
};

int run_audit(AuditArgs& args) {
  std::vector<fs::path> files;
  if (!args.dir.empty()) {
    for (auto& f : list_spec_files(args.dir)) files.push_back(f);
  }
  for (const auto& f : args.mlp_files) files.emplace_back(f);
  if (files.empty()) {
    throw fsp::ConfigError("audit: give --dir or --mlp files");
  }

  std::size_t failures = 0;
  for (const auto& file : files) {
    std::string verdict = "ok";
    try {
      const auto spec = fsp::io::load_mlp(file);
      const double range = args.weight_range > 0.0
                               ? args.weight_range
                               : (spec.activation ==
                                          fsp::net::Activation::kSigmoid
                                      ? 10.0
                                      : 3.0);
      if (!fsp::net::all_inputs_reach_output(spec)) {
        verdict = "FAIL: an input cannot reach any output";
      } else if (!fsp::net::spec_equal(spec, fsp::net::apply_mask(spec))) {
        verdict = "FAIL: weights adjacent to inactive neurons are non-zero";
      } else {
        for (const auto& w : spec.weights) {
          for (double v : w.data()) {
            if (std::fabs(v) > range) {
              verdict = "FAIL: weight " + fmt(v) + " outside [-" + fmt(range) +
                        ", " + fmt(range) + "]";
            }
          }
        }
      }
    } catch (const fsp::Error& e) {
      verdict = std::string("FAIL: ") + e.what();
    }
    if (verdict != "ok") ++failures;
    std::cout << file.string() << ": " << verdict << "\n";
  }
  std::cout << files.size() - failures << "/" << files.size() << " passed\n";
  return failures == 0 ? kExitOk : 1;
}

std::string find_config_arg(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc) return argv[i + 1];
    if (arg.rfind("--config=", 0) == 0) return arg.substr(9);
  }
  return {};
}

}  // namespace

int main(int argc, char** argv) {
  try {
    const CliDefaults defaults = load_defaults(find_config_arg(argc, argv));

    CLI::App app{"Simultaneous architecture-and-weight search for sparse MLPs "
                 "via a functional embedding space"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path,
                   "JSON config file with gen/train/search sections");
    int threads = 0;
    app.add_option("--threads", threads,
                   "worker threads (default: FUNCSPACE_THREADS or all cores)");

    GenMlpsArgs gen_args;
    gen_args.gen = defaults.gen;
    auto* gen_cmd = app.add_subcommand(
        "gen-mlps", "Generate a corpus of random sparse MLPs plus the shared "
                    "input grid");
    gen_cmd->add_option("--activation", gen_args.activation,
                        "sigmoid | leaky_relu | linear")
        ->required();
    gen_cmd->add_option("--count", gen_args.count, "number of networks")
        ->required();
    gen_cmd->add_option("--out", gen_args.out, "output directory")->required();
    gen_cmd->add_option("--seed", gen_args.seed, "master seed");
    gen_cmd->add_option("--n-max", gen_args.gen.n_max);
    gen_cmd->add_option("--l-max", gen_args.gen.l_max);
    gen_cmd->add_option("--hidden-min", gen_args.gen.hidden_min);
    gen_cmd->add_option("--hidden-max", gen_args.gen.hidden_max);
    gen_cmd->add_option("--input-dim", gen_args.gen.input_dim);
    gen_cmd->add_option("--output-dim", gen_args.gen.output_dim);
    gen_cmd->add_option("--depth", gen_args.fixed_depth,
                        "pin the hidden-layer count instead of drawing it");

    GenDatasetArgs data_args;
    auto* data_cmd = app.add_subcommand(
        "gen-dataset",
        "Sample uniform inputs, label them with a generator MLP and split");
    data_cmd->add_option("--mlp", data_args.mlp_file, "generator spec file")
        ->required();
    data_cmd->add_option("--rows", data_args.rows, "total rows");
    data_cmd->add_option("--ratio", data_args.ratio, "train:val:test");
    data_cmd->add_option("--out", data_args.out, "output .fds file")
        ->required();
    data_cmd->add_option("--seed", data_args.seed, "master seed");

    TrainArgs train_args;
    train_args.train = defaults.train;
    train_args.loss_text = defaults.loss_text;
    train_args.d_z = defaults.d_z;
    train_args.trunk_widths = defaults.trunk_widths;
    train_args.input_scale = defaults.input_scale;
    auto* train_cmd = app.add_subcommand(
        "train-ae", "Train the multi-scale autoencoder on a generated corpus");
    train_cmd->add_option("--data", train_args.data_dir,
                          "corpus directory from gen-mlps")
        ->required();
    train_cmd->add_option("--loss", train_args.loss_text, "min | p:<float>");
    train_cmd->add_option("--epochs", train_args.train.epochs);
    train_cmd->add_option("--batch", train_args.train.batch);
    train_cmd->add_option("--lr", train_args.train.lr);
    train_cmd->add_option("--d-z", train_args.d_z, "embedding dimension");
    train_cmd->add_option("--l-max", train_args.l_max_override,
                          "decoder depths (default: max depth in corpus)");
    train_cmd->add_option("--out", train_args.out, "checkpoint directory")
        ->required();
    train_cmd->add_option("--seed", train_args.seed, "master seed");

    EvalArgs eval_args;
    eval_args.gen = defaults.gen;
    auto* eval_cmd = app.add_subcommand(
        "eval-ae",
        "Reconstruction quality grid (median MPE per encoder/decoder pair)");
    eval_cmd->add_option("--ckpt", eval_args.ckpt, "checkpoint directory")
        ->required();
    eval_cmd->add_option("--count", eval_args.count, "networks per depth");
    eval_cmd->add_option("--out", eval_args.out, "output CSV")->required();
    eval_cmd->add_option("--seed", eval_args.seed, "master seed");
    eval_cmd->add_flag("--baseline", eval_args.baseline,
                       "evaluate a fresh untrained model instead");

    SearchArgs search_args;
    search_args.search = defaults.search;
    search_args.decoders_text = defaults.decoders_text;
    auto* search_cmd = app.add_subcommand(
        "search",
        "Gradient descent in the embedding space for a compact MLP fitting a "
        "dataset");
    search_cmd->add_option("--ckpt", search_args.ckpt, "checkpoint directory")
        ->required();
    search_cmd->add_option("--data", search_args.data, "FDS1 dataset")
        ->required();
    search_cmd->add_option("--alpha", search_args.search.alpha,
                           "sparsity penalty weight");
    search_cmd->add_option("--iters", search_args.search.iterations);
    search_cmd->add_option("--lr-z", search_args.search.lr_z);
    search_cmd->add_option("--lr-t", search_args.search.lr_t);
    search_cmd->add_option("--minibatch", search_args.search.minibatch,
                           "rows per step (0 = full train split)");
    search_cmd->add_option("--restarts", search_args.search.restarts);
    search_cmd->add_option("--decoders", search_args.decoders_text,
                           "comma list, e.g. 1,2 (default: all)");
    search_cmd->add_option("--out", search_args.out, "output directory")
        ->required();
    search_cmd->add_option("--seed", search_args.seed, "master seed");

    ScanArgs scan_args;
    scan_args.base.search = defaults.search;
    auto* scan_cmd = app.add_subcommand(
        "scan-alpha", "Sparsity/accuracy tradeoff curve over an alpha list");
    scan_cmd->add_option("--ckpt", scan_args.base.ckpt)->required();
    scan_cmd->add_option("--data", scan_args.base.data)->required();
    scan_cmd->add_option("--alphas", scan_args.alphas_text,
                         "comma list, strictly increasing")
        ->required();
    scan_cmd->add_option("--decoder", scan_args.decoder, "decoder to scan");
    scan_cmd->add_option("--iters", scan_args.base.search.iterations);
    scan_cmd->add_option("--lr-z", scan_args.base.search.lr_z);
    scan_cmd->add_option("--lr-t", scan_args.base.search.lr_t);
    scan_cmd->add_option("--minibatch", scan_args.base.search.minibatch);
    scan_cmd->add_option("--restarts", scan_args.base.search.restarts);
    scan_cmd->add_option("--out", scan_args.base.out, "output directory")
        ->required();
    scan_cmd->add_option("--seed", scan_args.base.seed, "master seed");

    SurfaceArgs surface_args;
    auto* surface_cmd = app.add_subcommand(
        "export-surface",
        "Sweep two inputs of two networks for external 3-D plotting");
    surface_cmd->add_option("--mlp", surface_args.mlp_files,
                            "spec file (give twice)")
        ->expected(1, 2);
    surface_cmd->add_option("--fix", surface_args.fix,
                            "held dimension, e.g. dim=3,value=0.5");
    surface_cmd->add_option("--grid", surface_args.grid, "points per axis");
    surface_cmd->add_option("--out", surface_args.out, "output CSV")
        ->required();

    AuditArgs audit_args;
    auto* audit_cmd = app.add_subcommand(
        "audit", "Check spec files: reachability, masking, weight support");
    audit_cmd->add_option("--dir", audit_args.dir, "directory of mlp_*.json");
    audit_cmd->add_option("--mlp", audit_args.mlp_files, "individual files");
    audit_cmd->add_option("--weight-range", audit_args.weight_range,
                          "expected |w| bound (default by activation)");

    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      app.exit(e);
      return kExitUsage;
    }

    if (threads > 0) fsp::util::set_thread_count(threads);

    if (gen_cmd->parsed()) return run_gen_mlps(gen_args);
    if (data_cmd->parsed()) return run_gen_dataset(data_args);
    if (train_cmd->parsed()) return run_train(train_args);
    if (eval_cmd->parsed()) return run_eval(eval_args);
    if (search_cmd->parsed()) return run_search(search_args);
    if (scan_cmd->parsed()) return run_scan(scan_args);
    if (surface_cmd->parsed()) return run_surface(surface_args);
    if (audit_cmd->parsed()) return run_audit(audit_args);
    return kExitUsage;
  } catch (const fsp::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fsp::NonFiniteError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const fsp::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fsp::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
