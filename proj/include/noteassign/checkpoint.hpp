#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "noteassign/network.hpp"

namespace noteassign {

// Checkpoint layout: "NACK" magic, u32 version, u64 header length, a JSON
// header {"model": ModelConfig, "arrays": [{name, shape, offset, count}],
// "meta": {...}}, then the float32 arrays back to back (row-major).

void save_checkpoint(const std::filesystem::path& path, nn::Model<float>& model,
                     const nlohmann::json& meta = nlohmann::json::object());

struct CheckpointHeader {
  nn::ModelConfig config;
  nlohmann::json meta;
};

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Restores a model; every parameter and statistic must be present with the
/// expected shape.
nn::Model<float> load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

/// As above, but throws DataError unless the stored config equals `expected`.
nn::Model<float> load_checkpoint(const std::filesystem::path& path, const nn::ModelConfig& expected,
                                 nlohmann::json* meta = nullptr);

/// Copies every parameter value and statistic of `from` into `to`.
void copy_state(nn::Model<float>& from, nn::Model<float>& to);

}  // namespace noteassign
