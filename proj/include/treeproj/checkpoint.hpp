#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "treeproj/model.hpp"

namespace treeproj {

struct Checkpoint {
  TransformerModel model;
  std::int64_t step = 0;
  std::string task;
};

// Writes <dir>/manifest.json (config, step, task, tensor names and shapes)
// and <dir>/data.bin (little-endian f64 tensors concatenated in manifest
// order). Creates the directory if needed.
void save_checkpoint(const TransformerModel& model, std::int64_t step, const std::string& task,
                     const std::filesystem::path& dir);

// Throws LoadError on any inconsistency (unknown or missing tensor names,
// shape mismatches, truncated or oversized data). Nothing is returned on
// failure, so there is no partially loaded model.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

std::string config_to_json(const EncoderConfig& config);
EncoderConfig config_from_json(const std::string& text);

}  // namespace treeproj
