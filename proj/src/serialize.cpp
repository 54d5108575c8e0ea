#include "funcspace/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "funcspace/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian and written byte-for-byte");

namespace funcspace::io {

using nlohmann::json;

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return data;
}

json parse_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void check_format(const json& doc, const std::string& expected_format,
                  int max_version, const std::filesystem::path& path) {
  const std::string format = doc.value("format", std::string{});
  if (format != expected_format) {
    throw FormatError(path.string() + ": format mismatch, expected \"" +
                      expected_format + "\", found \"" + format + "\"");
  }
  const int version = doc.value("version", -1);
  if (version < 1 || version > max_version) {
    throw FormatError(path.string() + ": unsupported version " +
                      std::to_string(version) + ", expected <= " +
                      std::to_string(max_version));
  }
}

void append_u32(std::string& out, std::uint32_t v) {
  char bytes[4];
  std::memcpy(bytes, &v, 4);
  out.append(bytes, 4);
}

void append_f32(std::string& out, float v) {
  char bytes[4];
  std::memcpy(bytes, &v, 4);
  out.append(bytes, 4);
}

std::uint32_t read_u32(const std::string& data, std::size_t offset) {
  std::uint32_t v = 0;
  std::memcpy(&v, data.data() + offset, 4);
  return v;
}

float read_f32(const std::string& data, std::size_t offset) {
  float v = 0.0f;
  std::memcpy(&v, data.data() + offset, 4);
  return v;
}

}  // namespace

void write_text_file(const std::filesystem::path& path,
                     const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

// --- MlpSpec ------------------------------------------------------------------

void save_mlp(const net::MlpSpec& spec, const std::filesystem::path& path) {
  net::check_valid(spec);
  json doc;
  doc["format"] = "mlp-spec";
  doc["version"] = 1;
  doc["activation"] = net::activation_name(spec.activation);
  doc["input_dim"] = spec.input_dim;
  doc["hidden_sizes"] = spec.hidden;
  doc["output_dim"] = spec.output_dim;
  json masks = json::array();
  for (const auto& mask : spec.masks) {
    json row = json::array();
    for (double g : mask) {
      if (g != 0.0 && g != 1.0) {
        throw FormatError("save_mlp: only hard 0/1 masks are serializable");
      }
      row.push_back(static_cast<int>(g));
    }
    masks.push_back(std::move(row));
  }
  doc["masks"] = std::move(masks);
  json weights = json::array();
  for (const diff::Tensor& w : spec.weights) {
    weights.push_back(std::vector<double>(w.data().begin(), w.data().end()));
  }
  doc["weights"] = std::move(weights);
  write_text_file(path, doc.dump(1) + "\n");
}

net::MlpSpec load_mlp(const std::filesystem::path& path) {
  const json doc = parse_json(path);
  check_format(doc, "mlp-spec", 1, path);
  try {
    net::MlpSpec spec;
    spec.activation = net::parse_activation(doc.at("activation"));
    spec.input_dim = doc.at("input_dim");
    spec.output_dim = doc.at("output_dim");
    spec.hidden = doc.at("hidden_sizes").get<std::vector<int>>();
    for (const auto& row : doc.at("masks")) {
      std::vector<double> mask;
      for (const auto& v : row) {
        const int bit = v.get<int>();
        if (bit != 0 && bit != 1) {
          throw FormatError(path.string() + ": mask entries must be 0 or 1");
        }
        mask.push_back(bit);
      }
      spec.masks.push_back(std::move(mask));
    }
    const auto& weights = doc.at("weights");
    for (std::size_t k = 0; k < weights.size(); ++k) {
      const int rows = k == 0 ? spec.input_dim : spec.hidden.at(k - 1);
      const int cols = k == weights.size() - 1
                           ? spec.output_dim
                           : spec.hidden.at(k);
      auto values = weights[k].get<std::vector<double>>();
      spec.weights.emplace_back(
          diff::Shape{static_cast<std::size_t>(rows),
                      static_cast<std::size_t>(cols)},
          std::move(values));
    }
    net::check_valid(spec);
    return spec;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// --- FunctionalDataset ----------------------------------------------------------

void save_dataset(const gen::FunctionalDataset& ds,
                  const std::filesystem::path& path) {
  const std::size_t rows = ds.rows();
  if (ds.train_count + ds.val_count + ds.test_count != rows) {
    throw ConfigError("save_dataset: split counts must sum to the row count");
  }
  const std::size_t in_dim = ds.inputs.empty() ? 0 : ds.inputs.dim(1);
  const std::size_t out_dim = ds.outputs.empty() ? 0 : ds.outputs.dim(1);

  std::string blob;
  blob.reserve(28 + rows * (in_dim + out_dim) * 4);
  blob.append("FDS1", 4);
  append_u32(blob, static_cast<std::uint32_t>(rows));
  append_u32(blob, static_cast<std::uint32_t>(in_dim));
  append_u32(blob, static_cast<std::uint32_t>(out_dim));
  append_u32(blob, static_cast<std::uint32_t>(ds.train_count));
  append_u32(blob, static_cast<std::uint32_t>(ds.val_count));
  append_u32(blob, static_cast<std::uint32_t>(ds.test_count));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < in_dim; ++c) {
      append_f32(blob, static_cast<float>(ds.inputs.at(r, c)));
    }
    for (std::size_t c = 0; c < out_dim; ++c) {
      append_f32(blob, static_cast<float>(ds.outputs.at(r, c)));
    }
  }
  write_text_file(path, blob);
}

gen::FunctionalDataset load_dataset(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  if (data.size() < 28) {
    throw FormatError(path.string() + ": truncated header, file ends at byte " +
                      std::to_string(data.size()) + " of 28");
  }
  const std::string magic = data.substr(0, 4);
  if (magic != "FDS1") {
    throw FormatError(path.string() + ": magic mismatch, expected \"FDS1\"" +
                      ", found \"" + magic + "\"");
  }
  const std::uint32_t rows = read_u32(data, 4);
  const std::uint32_t in_dim = read_u32(data, 8);
  const std::uint32_t out_dim = read_u32(data, 12);
  gen::FunctionalDataset ds;
  ds.train_count = read_u32(data, 16);
  ds.val_count = read_u32(data, 20);
  ds.test_count = read_u32(data, 24);
  if (ds.train_count + ds.val_count + ds.test_count != rows) {
    throw FormatError(path.string() + ": split counts do not sum to rows");
  }
  const std::size_t expected =
      28 + static_cast<std::size_t>(rows) * (in_dim + out_dim) * 4;
  if (data.size() != expected) {
    throw FormatError(path.string() + ": expected " +
                      std::to_string(expected) + " bytes, file ends at byte " +
                      std::to_string(data.size()));
  }

  ds.inputs = diff::Tensor({rows, in_dim});
  ds.outputs = diff::Tensor({rows, out_dim});
  std::size_t offset = 28;
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < in_dim; ++c, offset += 4) {
      ds.inputs.at(r, c) = static_cast<double>(read_f32(data, offset));
    }
    for (std::uint32_t c = 0; c < out_dim; ++c, offset += 4) {
      ds.outputs.at(r, c) = static_cast<double>(read_f32(data, offset));
    }
  }
  return ds;
}

// --- Checkpoints -----------------------------------------------------------------

void save_checkpoint(const ae::AutoencoderParams& params,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto entries = params.tensor_entries();

  json doc;
  doc["format"] = "funcspace-checkpoint";
  doc["version"] = 1;
  json arch;
  arch["activation"] = net::activation_name(params.arch.activation);
  arch["input_dim"] = params.arch.input_dim;
  arch["output_dim"] = params.arch.output_dim;
  arch["n_max"] = params.arch.n_max;
  arch["l_max"] = params.arch.l_max;
  arch["d_z"] = params.arch.d_z;
  arch["trunk_widths"] = params.arch.trunk_widths;
  arch["channels"] = params.arch.channels;
  arch["leaky_slope"] = params.arch.leaky_slope;
  arch["input_scale"] = params.arch.input_scale;
  doc["arch"] = std::move(arch);
  doc["embedding_stats"] = {{"mean", params.stats.mean},
                            {"std", params.stats.stdev}};

  std::string blob;
  json table = json::array();
  for (const auto& [name, tensor] : entries) {
    json entry;
    entry["name"] = name;
    entry["shape"] = tensor->shape();
    entry["offset"] = blob.size();
    entry["count"] = tensor->size();
    table.push_back(std::move(entry));
    for (double v : tensor->data()) {
      append_f32(blob, static_cast<float>(v));
    }
  }
  doc["tensors"] = std::move(table);

  write_text_file(dir / "manifest.json", doc.dump(1) + "\n");
  write_text_file(dir / "tensors.bin", blob);
}

ae::AutoencoderParams load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  const json doc = parse_json(manifest_path);
  check_format(doc, "funcspace-checkpoint", 1, manifest_path);

  try {
    const json& arch_doc = doc.at("arch");
    ae::ArchConfig arch;
    arch.activation = net::parse_activation(arch_doc.at("activation"));
    arch.input_dim = arch_doc.at("input_dim");
    arch.output_dim = arch_doc.at("output_dim");
    arch.n_max = arch_doc.at("n_max");
    arch.l_max = arch_doc.at("l_max");
    arch.d_z = arch_doc.at("d_z");
    arch.trunk_widths = arch_doc.at("trunk_widths").get<std::vector<int>>();
    arch.channels = arch_doc.at("channels").get<std::vector<int>>();
    arch.leaky_slope = arch_doc.at("leaky_slope");
    arch.input_scale = arch_doc.at("input_scale");

    ae::AutoencoderParams params = ae::init_params(arch, 0);
    params.stats.mean =
        doc.at("embedding_stats").at("mean").get<std::vector<double>>();
    params.stats.stdev =
        doc.at("embedding_stats").at("std").get<std::vector<double>>();

    const std::string blob = read_file(dir / "tensors.bin");
    const json& table = doc.at("tensors");
    auto entries = params.tensor_entries();
    if (table.size() != entries.size()) {
      throw FormatError(manifest_path.string() + ": expected " +
                        std::to_string(entries.size()) + " tensors, found " +
                        std::to_string(table.size()));
    }
    for (std::size_t e = 0; e < entries.size(); ++e) {
      const json& entry = table[e];
      if (entry.at("name") != entries[e].first) {
        throw FormatError(manifest_path.string() + ": tensor " +
                          std::to_string(e) + " is named \"" +
                          std::string(entry.at("name")) + "\", expected \"" +
                          entries[e].first + "\"");
      }
      diff::Tensor& tensor = *entries[e].second;
      const std::size_t offset = entry.at("offset");
      const std::size_t count = entry.at("count");
      if (count != tensor.size() ||
          entry.at("shape").get<diff::Shape>() != tensor.shape()) {
        throw FormatError(manifest_path.string() + ": tensor \"" +
                          entries[e].first + "\" has an unexpected shape");
      }
      if (offset + count * 4 > blob.size()) {
        throw FormatError(dir.string() + "/tensors.bin: truncated, tensor \"" +
                          entries[e].first + "\" needs bytes up to " +
                          std::to_string(offset + count * 4) +
                          ", file ends at byte " +
                          std::to_string(blob.size()));
      }
      for (std::size_t i = 0; i < count; ++i) {
        tensor[i] = static_cast<double>(read_f32(blob, offset + i * 4));
      }
    }
    return params;
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
}

}  // namespace funcspace::io
