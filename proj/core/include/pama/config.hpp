#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "pama/geometry.hpp"
#include "pama/model.hpp"
#include "pama/synth.hpp"
#include "pama/training.hpp"

namespace pama {

// JSON readers are strict: unknown keys raise ConfigError naming the key.
// Missing keys keep the defaults of the target struct.

nlohmann::json to_json(const GeometryConfig& g);
GeometryConfig geometry_config_from_json(const nlohmann::json& j, const std::string& path = "geometry");

nlohmann::json to_json(const ModelConfig& m);
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path = "model");
/// Keys present in `j` override `defaults`.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig defaults, const std::string& path);

nlohmann::json to_json(const TrainConfig& t);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig defaults, const std::string& path);

std::string to_string(TrainMode mode);

/// Everything a run file can hold. Stage sections start from their own defaults.
struct RunConfig {
  SynthSpec synth = SynthSpec::defaults();
  ModelConfig model;
  TrainConfig pretrain;
  TrainConfig finetune;
  TrainConfig probe;

  RunConfig();
};

RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& c);

}  // namespace pama
