#include "funcspace/manifest.hpp"

#include <openssl/evp.h>

#include <fstream>

#include "funcspace/errors.hpp"
#include "funcspace/serialize.hpp"

namespace funcspace::io {

namespace {

std::string to_hex(std::span<const unsigned char> digest) {
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(digest.size() * 2);
  for (unsigned char b : digest) {
    out.push_back(hex[b >> 4]);
    out.push_back(hex[b & 0xf]);
  }
  return out;
}

struct DigestContext {
  EVP_MD_CTX* ctx;
  DigestContext() : ctx(EVP_MD_CTX_new()) {
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
      throw Error("sha256: cannot initialize digest context");
    }
  }
  ~DigestContext() { EVP_MD_CTX_free(ctx); }
  DigestContext(const DigestContext&) = delete;
  DigestContext& operator=(const DigestContext&) = delete;

  void update(const void* data, std::size_t len) {
    if (EVP_DigestUpdate(ctx, data, len) != 1) {
      throw Error("sha256: digest update failed");
    }
  }
  std::string finish() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
      throw Error("sha256: digest finalization failed");
    }
    return to_hex(std::span<const unsigned char>(digest, len));
  }
};

}  // namespace

std::string sha256_hex(std::span<const unsigned char> bytes) {
  DigestContext ctx;
  if (!bytes.empty()) ctx.update(bytes.data(), bytes.size());
  return ctx.finish();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("sha256: cannot open " + path.string());
  DigestContext ctx;
  char buffer[1 << 16];
  while (in) {
    in.read(buffer, sizeof(buffer));
    const std::streamsize got = in.gcount();
    if (got > 0) ctx.update(buffer, static_cast<std::size_t>(got));
  }
  if (in.bad()) throw IoError("sha256: read failed for " + path.string());
  return ctx.finish();
}

void RunManifest::add_input(const std::filesystem::path& path) {
  inputs.emplace_back(path.string(), sha256_file(path));
}

void RunManifest::add_output(const std::filesystem::path& path) {
  outputs.emplace_back(path.string(), sha256_file(path));
}

void write_run_manifest(const std::filesystem::path& file,
                        const RunManifest& manifest) {
  nlohmann::json doc;
  doc["format"] = "funcspace-run";
  doc["version"] = 1;
  doc["tool_version"] = manifest.tool_version;
  doc["command"] = manifest.command;
  doc["config"] = manifest.config;
  doc["seed"] = manifest.seed;
  doc["threads"] = manifest.threads;
  auto files = [](const std::vector<std::pair<std::string, std::string>>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [path, digest] : v) {
      arr.push_back({{"path", path}, {"sha256", digest}});
    }
    return arr;
  };
  doc["inputs"] = files(manifest.inputs);
  doc["outputs"] = files(manifest.outputs);
  nlohmann::json timings = nlohmann::json::object();
  for (const auto& [phase, ms] : manifest.timings_ms) timings[phase] = ms;
  doc["timings_ms"] = std::move(timings);
  write_text_file(file, doc.dump(1) + "\n");
}

nlohmann::json load_run_manifest(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("malformed run manifest " + file.string() + ": " +
                      e.what());
  }
}

}  // namespace funcspace::io
