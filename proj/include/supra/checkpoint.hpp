#pragma once

#include <cstdint>
#include <filesystem>

#include "json.hpp"
#include "supra/container.hpp"
#include "supra/model.hpp"
#include "supra/optim.hpp"

namespace supra {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  ModelConfig config;
  std::int64_t epoch = 0;  // completed epochs
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();
};

/// Parameters in registration order; with `optimizer`, its momentum buffers
/// follow as "optim.momentum.<name>" and its step counter joins the metadata.
Container make_checkpoint(const Model& model, const CheckpointMeta& meta, const OptimizerState* optimizer = nullptr);
void save_checkpoint(const std::filesystem::path& path, const Model& model, const CheckpointMeta& meta,
                     const OptimizerState* optimizer = nullptr);

CheckpointMeta checkpoint_meta(const Container& container);

/// Copies parameter values into `model`. Name or shape disagreements raise
/// ConfigError listing the missing, unexpected and mismatched names.
void load_parameters(Model& model, const Container& container);
/// Restores momentum buffers and the step counter written by make_checkpoint.
void load_optimizer(OptimizerState& state, const Model& model, const Container& container);

/// Reads a checkpoint and builds the model it describes.
Model load_model(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

}  // namespace supra
