#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace funcspace::io {

inline constexpr const char* kToolVersion = "0.1.0";

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_file(const std::filesystem::path& path);

// One record per run: what ran, with which effective configuration and
// seeds, which files went in and came out (with content digests), and how
// long the phases took. Reruns with identical inputs must reproduce the
// output digests exactly; wall-clock timings are informational.
struct RunManifest {
  std::string tool_version = kToolVersion;
  std::string command;
  nlohmann::json config;
  std::uint64_t seed = 0;
  int threads = 0;
  std::vector<std::pair<std::string, std::string>> inputs;   // path, digest
  std::vector<std::pair<std::string, std::string>> outputs;  // path, digest
  std::vector<std::pair<std::string, double>> timings_ms;

  void add_input(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& path);
};

void write_run_manifest(const std::filesystem::path& file,
                        const RunManifest& manifest);
nlohmann::json load_run_manifest(const std::filesystem::path& file);

}  // namespace funcspace::io
