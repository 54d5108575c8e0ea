#pragma once

#include <filesystem>
#include <string>

#include "funcspace/autoencoder.hpp"
#include "funcspace/generate.hpp"
#include "funcspace/mlp.hpp"

namespace funcspace::io {

// MlpSpec text format: a JSON document with fields format ("mlp-spec"),
// version (1), activation, input_dim, hidden_sizes, output_dim, masks
// (arrays of 0/1 per hidden layer, n_max entries each) and weights
// (row-major arrays per layer). Weights round-trip exactly.
void save_mlp(const net::MlpSpec& spec, const std::filesystem::path& path);
net::MlpSpec load_mlp(const std::filesystem::path& path);

// FunctionalDataset binary format "FDS1": the 4 magic bytes, six unsigned
// 32-bit little-endian values {row count, input dim, output dim, train
// count, val count, test count}, then one 32-bit little-endian real per
// value, inputs then outputs per row, train rows first, then val, then test.
void save_dataset(const gen::FunctionalDataset& ds,
                  const std::filesystem::path& path);
gen::FunctionalDataset load_dataset(const std::filesystem::path& path);

// Checkpoint directory: manifest.json (format/version, architecture,
// embedding statistics, tensor table with byte offsets) plus tensors.bin of
// 32-bit little-endian reals, row-major, in manifest order.
void save_checkpoint(const ae::AutoencoderParams& params,
                     const std::filesystem::path& dir);
ae::AutoencoderParams load_checkpoint(const std::filesystem::path& dir);

void write_text_file(const std::filesystem::path& path,
                     const std::string& content);

}  // namespace funcspace::io
