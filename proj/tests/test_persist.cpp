#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "funcspace/manifest.hpp"
#include "funcspace/serialize.hpp"
#include "funcspace/train.hpp"

namespace fs = std::filesystem;
using funcspace::FormatError;
using funcspace::gen::GenConfig;
using funcspace::net::Activation;
using funcspace::util::Rng;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("funcspace_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("mlp specs round-trip exactly through the text format") {
  TempDir tmp;
  GenConfig cfg;
  cfg.seed = 7;
  for (std::uint64_t i = 0; i < 25; ++i) {
    Rng rng(funcspace::util::derive_seed(cfg.seed, i));
    const auto spec = funcspace::gen::random_mlp(cfg, rng);
    const fs::path file = tmp.path / "spec.json";
    funcspace::io::save_mlp(spec, file);
    const auto loaded = funcspace::io::load_mlp(file);
    CHECK(funcspace::net::spec_equal(spec, loaded));
  }
}

TEST_CASE("mlp loader rejects future versions and bad masks") {
  TempDir tmp;
  const fs::path file = tmp.path / "bad.json";
  funcspace::io::write_text_file(
      file, R"({"format":"mlp-spec","version":2,"activation":"sigmoid"})");
  CHECK_THROWS_AS(funcspace::io::load_mlp(file), FormatError);
  funcspace::io::write_text_file(
      file, R"({"format":"other","version":1})");
  CHECK_THROWS_WITH_AS(funcspace::io::load_mlp(file),
                       doctest::Contains("expected \"mlp-spec\""),
                       FormatError);
}

TEST_CASE("FDS1 header is 28 bytes and fields land where declared") {
  TempDir tmp;
  GenConfig cfg;
  cfg.seed = 3;
  Rng rng(1);
  const auto spec = funcspace::gen::random_mlp(cfg, rng);
  Rng data_rng(2);
  const auto ds =
      funcspace::gen::make_search_dataset(spec, 10, {5, 3, 2}, data_rng);
  const fs::path file = tmp.path / "data.fds";
  funcspace::io::save_dataset(ds, file);

  const std::string bytes = slurp(file);
  // 4 magic + 6 u32 header + 10 rows * (3 + 1) floats
  CHECK(bytes.size() == 28 + 10 * 4 * 4);
  CHECK(bytes.substr(0, 4) == "FDS1");
  auto u32 = [&](std::size_t off) {
    return static_cast<unsigned>(static_cast<unsigned char>(bytes[off])) |
           static_cast<unsigned>(static_cast<unsigned char>(bytes[off + 1]))
               << 8 |
           static_cast<unsigned>(static_cast<unsigned char>(bytes[off + 2]))
               << 16 |
           static_cast<unsigned>(static_cast<unsigned char>(bytes[off + 3]))
               << 24;
  };
  CHECK(u32(4) == 10);   // rows
  CHECK(u32(8) == 3);    // input dim
  CHECK(u32(12) == 1);   // output dim
  CHECK(u32(16) == 5);   // train
  CHECK(u32(20) == 3);   // val
  CHECK(u32(24) == 2);   // test
}

TEST_CASE("datasets round-trip bit-exactly") {
  TempDir tmp;
  GenConfig cfg;
  cfg.seed = 5;
  Rng rng(4);
  const auto spec = funcspace::gen::random_mlp(cfg, rng);
  Rng data_rng(6);
  const auto ds =
      funcspace::gen::make_search_dataset(spec, 321, {5, 3, 2}, data_rng);
  const fs::path file = tmp.path / "data.fds";
  funcspace::io::save_dataset(ds, file);
  const auto loaded = funcspace::io::load_dataset(file);
  CHECK(loaded.inputs == ds.inputs);
  CHECK(loaded.outputs == ds.outputs);
  CHECK(loaded.train_count == ds.train_count);
  CHECK(loaded.val_count == ds.val_count);
  CHECK(loaded.test_count == ds.test_count);

  // second save is byte-identical
  const fs::path file2 = tmp.path / "data2.fds";
  funcspace::io::save_dataset(loaded, file2);
  CHECK(slurp(file) == slurp(file2));
}

TEST_CASE("dataset loader names corruption precisely") {
  TempDir tmp;
  const fs::path file = tmp.path / "broken.fds";

  funcspace::io::write_text_file(file, "FDS2garbage_header_padding_x");
  CHECK_THROWS_WITH_AS(funcspace::io::load_dataset(file),
                       doctest::Contains("expected \"FDS1\""), FormatError);

  std::string ok = "FDS1";
  auto push_u32 = [&](unsigned v) {
    for (int b = 0; b < 4; ++b) ok.push_back(static_cast<char>(v >> (8 * b)));
  };
  push_u32(10);
  push_u32(3);
  push_u32(1);
  push_u32(5);
  push_u32(3);
  push_u32(2);
  ok.resize(28 + 7);  // truncated body
  funcspace::io::write_text_file(file, ok);
  CHECK_THROWS_WITH_AS(funcspace::io::load_dataset(file),
                       doctest::Contains("ends at byte 35"), FormatError);
}

TEST_CASE("checkpoints round-trip and reload to identical behaviour") {
  TempDir tmp;
  funcspace::ae::ArchConfig arch;
  arch.n_max = 3;
  arch.l_max = 2;
  arch.d_z = 8;
  arch.trunk_widths = {32, 24, 16};
  auto params = funcspace::ae::init_params(arch, 99);
  params.stats.mean.assign(8, 0.25);
  params.stats.stdev.assign(8, 1.5);

  const fs::path ck = tmp.path / "ckpt";
  funcspace::io::save_checkpoint(params, ck);
  auto loaded = funcspace::io::load_checkpoint(ck);

  CHECK(loaded.arch.n_max == 3);
  CHECK(loaded.arch.l_max == 2);
  CHECK(loaded.stats.mean == params.stats.mean);
  CHECK(loaded.stats.stdev == params.stats.stdev);

  // stored values are float32; a re-save must be byte-identical
  const fs::path ck2 = tmp.path / "ckpt2";
  funcspace::io::save_checkpoint(loaded, ck2);
  CHECK(slurp(ck / "tensors.bin") == slurp(ck2 / "tensors.bin"));
  CHECK(slurp(ck / "manifest.json") == slurp(ck2 / "manifest.json"));

  // two loads evaluate identically
  GenConfig gen;
  gen.n_max = 3;
  gen.l_max = 2;
  gen.hidden_min = 2;
  gen.hidden_max = 3;
  gen.seed = 8;
  const auto corpus = funcspace::gen::gen_corpus(gen, 5);
  std::vector<std::size_t> all(corpus.items.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  auto again = funcspace::io::load_checkpoint(ck);
  const double loss_a = funcspace::ae::batch_loss(
      loaded, corpus, all, funcspace::ae::LossSpec::min_loss());
  const double loss_b = funcspace::ae::batch_loss(
      again, corpus, all, funcspace::ae::LossSpec::min_loss());
  CHECK(loss_a == loss_b);
}

TEST_CASE("checkpoint loader rejects future versions") {
  TempDir tmp;
  const fs::path ck = tmp.path / "ck";
  fs::create_directories(ck);
  funcspace::io::write_text_file(
      ck / "manifest.json",
      R"({"format":"funcspace-checkpoint","version":9})");
  funcspace::io::write_text_file(ck / "tensors.bin", "");
  CHECK_THROWS_WITH_AS(funcspace::io::load_checkpoint(ck),
                       doctest::Contains("unsupported version 9"),
                       FormatError);
}

TEST_CASE("sha256 matches the reference vectors") {
  auto digest_of = [](const std::string& s) {
    return funcspace::io::sha256_hex(std::span<const unsigned char>(
        reinterpret_cast<const unsigned char*>(s.data()), s.size()));
  };
  CHECK(digest_of("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(digest_of("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");

  TempDir tmp;
  const fs::path f = tmp.path / "v.txt";
  funcspace::io::write_text_file(f, "abc");
  CHECK(funcspace::io::sha256_file(f) == digest_of("abc"));
}

TEST_CASE("run manifests record inputs, outputs and recomputable digests") {
  TempDir tmp;
  const fs::path data = tmp.path / "input.bin";
  const fs::path out = tmp.path / "output.csv";
  funcspace::io::write_text_file(data, "payload");
  funcspace::io::write_text_file(out, "a,b\n1,2\n");

  funcspace::io::RunManifest m;
  m.command = "unit-test";
  m.config = {{"alpha", 0.5}};
  m.seed = 77;
  m.add_input(data);
  m.add_output(out);
  m.timings_ms.emplace_back("total", 12.5);
  const fs::path file = tmp.path / "run_manifest.json";
  funcspace::io::write_run_manifest(file, m);

  const auto doc = funcspace::io::load_run_manifest(file);
  CHECK(doc.at("command") == "unit-test");
  CHECK(doc.at("seed") == 77);
  REQUIRE(doc.at("outputs").size() == 1);
  CHECK(doc.at("outputs")[0].at("path") == out.string());
  CHECK(doc.at("outputs")[0].at("sha256") == funcspace::io::sha256_file(out));
  CHECK(doc.at("inputs")[0].at("sha256") == funcspace::io::sha256_file(data));
}
