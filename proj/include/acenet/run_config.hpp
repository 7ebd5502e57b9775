#pragma once

#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>

#include "acenet/model.hpp"
#include "acenet/trainer.hpp"

namespace acenet {

// Config files are flat JSON objects; keys mirror the struct field names.
// Unknown keys are rejected with a ConfigError naming the key.

nlohmann::json to_json(const ACEnetConfig& c);
nlohmann::json to_json(const TrainConfig& c);
ACEnetConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct RunConfig {
  ACEnetConfig model;
  TrainConfig train;
  std::string data;        // directory of *.case.json
  std::string validation;  // optional held-out directory
  std::string out;
  std::string init;        // stage-1 checkpoint for stage 2

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

/// Sets one key from a command-line string ("filters", "64"), validating type.
void apply_override(RunConfig& config, const std::string& key, const std::string& value);

}  // namespace acenet
