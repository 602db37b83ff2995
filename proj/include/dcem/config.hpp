#pragma once

// Experiment configuration: one JSON document with a section per module.
// Unknown keys are rejected so typos fail loudly.

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "dcem/data.hpp"
#include "dcem/model.hpp"
#include "dcem/sampling.hpp"
#include "dcem/schedule.hpp"
#include "dcem/training.hpp"
#include "dcem/transform.hpp"

namespace dcem {

struct PathsConfig {
  std::string run_dir = "runs/default";
  std::string corpus_dir = "runs/default/corpus";

  bool operator==(const PathsConfig&) const = default;
};

struct ExperimentConfig {
  uint64_t seed = 1234;
  ScheduleParams schedule;
  TransformConfig transform;
  ModelConfig model;
  TrainConfig train;
  BaselineConfig baseline;
  SamplerConfig sampler;
  DataConfig data;
  PathsConfig paths;

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

void to_json(nlohmann::json& j, const ScheduleParams& v);
void from_json(const nlohmann::json& j, ScheduleParams& v);
void to_json(nlohmann::json& j, const TransformConfig& v);
void from_json(const nlohmann::json& j, TransformConfig& v);
void to_json(nlohmann::json& j, const ModelConfig& v);
void from_json(const nlohmann::json& j, ModelConfig& v);
void to_json(nlohmann::json& j, const TrainConfig& v);
void from_json(const nlohmann::json& j, TrainConfig& v);
void to_json(nlohmann::json& j, const BaselineConfig& v);
void from_json(const nlohmann::json& j, BaselineConfig& v);
void to_json(nlohmann::json& j, const SamplerConfig& v);
void from_json(const nlohmann::json& j, SamplerConfig& v);
void to_json(nlohmann::json& j, const DataConfig& v);
void from_json(const nlohmann::json& j, DataConfig& v);
void to_json(nlohmann::json& j, const PathsConfig& v);
void from_json(const nlohmann::json& j, PathsConfig& v);
void to_json(nlohmann::json& j, const ExperimentConfig& v);
void from_json(const nlohmann::json& j, ExperimentConfig& v);

/// Parses and validates; relative paths resolve against the file's directory.
/// Throws ConfigError.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg);

/// Applies "section.key=value" style overrides (value parsed as JSON, falling
/// back to a string).
void apply_override(nlohmann::json& j, const std::string& assignment);

}  // namespace dcem
