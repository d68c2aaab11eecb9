#pragma once

// Run configuration shared by every CLI command.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kaqa/model.hpp"

namespace kaqa {

struct RunConfig {
  std::uint64_t seed = 7;
  ModelConfig model;
  AdamConfig adam;
  double clip_norm = 1.0;
  double kb_fraction = 0.3;
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  double threshold = kDefaultThreshold;
  std::size_t top_k = 50;
  double ppr_restart = 0.15;
  std::filesystem::path data_dir = "data";
  std::filesystem::path checkpoint = "model.ckpt";

  // Throws std::invalid_argument naming the offending setting.
  void validate() const;
};

struct ConfigEntry {
  std::string key;
  std::string value;
  std::string provenance;  // "reported" (published setting) or "chosen" (filled-in default)
  std::string note;
};

std::vector<ConfigEntry> describe(const RunConfig& config);
std::string format_config(const RunConfig& config);

}  // namespace kaqa
