#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "museli/model.hpp"

namespace museli {

// Self-describing container: version line "museli-ckpt-1", a JSON header
// with the model config and language list, then every named parameter
// tensor as little-endian float32, row-major.
struct Checkpoint {
  ModelConfig config;
  std::vector<std::string> language_list;
  ModelParams<double> params;
};

void save_checkpoint(Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// FNV-1a over the file bytes, hex encoded; used for provenance lines in
// reports.
std::string file_hash_hex(const std::filesystem::path& path);

std::string pooling_to_string(PoolingKind k);
PoolingKind pooling_from_string(const std::string& s);

}  // namespace museli
