#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "supra/dataio.hpp"
#include "supra/metrics.hpp"
#include "supra/model.hpp"
#include "supra/objectives.hpp"
#include "supra/optim.hpp"

namespace supra {

struct OptimizerConfig {
  double lr = 3e-4;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  double warmup_epochs = 5.0;
  std::size_t epochs = 40;  // warmup + cosine decay
  double grad_clip = 0.0;
  std::size_t batch_size = 8;
  std::size_t clips_per_video = 16;

  LrSchedule schedule() const;
  bool operator==(const OptimizerConfig&) const = default;
};

struct PathsConfig {
  std::string data_dir = "data";
  std::string run_dir = "run";

  bool operator==(const PathsConfig&) const = default;
};

struct EvalConfig {
  std::vector<double> thresholds{0.10, 0.25, 0.50};
  std::string aggregation = "per_video";  // or "pooled"
  std::string split = "test";

  Aggregation mode() const;
  bool operator==(const EvalConfig&) const = default;
};

struct AblationConfig {
  std::vector<std::size_t> n_queries{0, 1, 2, 4};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

  bool operator==(const AblationConfig&) const = default;
};

struct RunConfig {
  ModelConfig model;
  LossWeights loss;
  GeneratorConfig generator;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  /// Supervise the key-segment vectors with next-key targets.
  bool key_targets = true;
  PathsConfig paths;
  EvalConfig eval;
  AblationConfig ablation;

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

// JSON mappings. Parsing rejects unknown keys and wrong types with ConfigError;
// missing keys keep their defaults.
nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const LossWeights& c);
nlohmann::json to_json(const GeneratorConfig& c);
nlohmann::json to_json(const OptimizerConfig& c);
nlohmann::json to_json(const RunConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
LossWeights loss_weights_from_json(const nlohmann::json& j);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);
OptimizerConfig optimizer_config_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace supra
