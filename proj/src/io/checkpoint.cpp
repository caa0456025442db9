#include "supra/checkpoint.hpp"

#include <map>

#include "supra/config.hpp"
#include "supra/errors.hpp"

namespace supra {

namespace {

constexpr const char* kMomentumPrefix = "optim.momentum.";

std::string join(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) out += (out.empty() ? "" : ", ") + n;
  return out;
}

}  // namespace

Container make_checkpoint(const Model& model, const CheckpointMeta& meta, const OptimizerState* optimizer) {
  Container c;
  c.metadata = {{"format", "supra-checkpoint"},
                {"format_version", kCheckpointVersion},
                {"config", to_json(model.config())},
                {"epoch", meta.epoch},
                {"seed", meta.seed},
                {"extra", meta.extra}};
  for (const auto& p : model.parameters().items()) {
    auto v = p.tensor.values();
    c.entries.push_back({p.name, p.tensor.shape(), {v.begin(), v.end()}});
  }
  if (optimizer) {
    c.metadata["optimizer_step"] = optimizer->step;
    for (const auto& p : model.parameters().items()) {
      auto it = optimizer->momentum_buffers.find(p.name);
      std::vector<float> buf = it == optimizer->momentum_buffers.end() ? std::vector<float>(p.tensor.numel(), 0.0f)
                                                                       : it->second;
      c.entries.push_back({kMomentumPrefix + p.name, p.tensor.shape(), std::move(buf)});
    }
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const CheckpointMeta& meta,
                     const OptimizerState* optimizer) {
  write_container(path, make_checkpoint(model, meta, optimizer));
}

CheckpointMeta checkpoint_meta(const Container& container) {
  const auto& m = container.metadata;
  if (!m.is_object() || m.value("format", "") != "supra-checkpoint") throw DataError("not a checkpoint container");
  if (m.value("format_version", -1) != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + m.value("format_version", nlohmann::json()).dump());
  }
  CheckpointMeta meta;
  try {
    meta.config = model_config_from_json(m.at("config"));
    meta.epoch = m.at("epoch").get<std::int64_t>();
    meta.seed = m.at("seed").get<std::uint64_t>();
    meta.extra = m.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint metadata: ") + e.what());
  }
  return meta;
}

void load_parameters(Model& model, const Container& container) {
  std::map<std::string, const NamedTensor*> stored;
  for (const auto& e : container.entries) {
    if (e.name.rfind(kMomentumPrefix, 0) != 0) stored[e.name] = &e;
  }
  std::vector<std::string> missing, unexpected, mismatched;
  for (const auto& p : model.parameters().items()) {
    auto it = stored.find(p.name);
    if (it == stored.end()) {
      missing.push_back(p.name);
    } else if (it->second->shape != p.tensor.shape()) {
      mismatched.push_back(p.name + " " + shape_str(it->second->shape) + " vs " + shape_str(p.tensor.shape()));
    }
  }
  for (const auto& [name, e] : stored) {
    if (!model.parameters().contains(name)) unexpected.push_back(name);
  }
  if (!missing.empty() || !unexpected.empty() || !mismatched.empty()) {
    std::string msg = "checkpoint does not match the model:";
    if (!missing.empty()) msg += "\n  missing: " + join(missing);
    if (!unexpected.empty()) msg += "\n  unexpected: " + join(unexpected);
    if (!mismatched.empty()) msg += "\n  shape mismatch: " + join(mismatched);
    throw ConfigError(msg);
  }
  for (auto& p : model.parameters().items()) {
    const auto& src = stored.at(p.name)->values;
    std::copy(src.begin(), src.end(), p.tensor.values_mut().begin());
  }
}

void load_optimizer(OptimizerState& state, const Model& model, const Container& container) {
  state.momentum_buffers.clear();
  for (const auto& p : model.parameters().items()) {
    const NamedTensor* e = container.find(kMomentumPrefix + p.name);
    if (e == nullptr) throw DataError("checkpoint has no optimizer state for " + p.name);
    if (e->shape != p.tensor.shape()) throw DataError("optimizer state shape mismatch for " + p.name);
    state.momentum_buffers[p.name] = e->values;
  }
  state.step = container.metadata.value("optimizer_step", std::int64_t{0});
}

Model load_model(const std::filesystem::path& path, CheckpointMeta* meta_out) {
  const Container c = read_container(path);
  CheckpointMeta meta = checkpoint_meta(c);
  Model model(meta.config, meta.seed);
  load_parameters(model, c);
  if (meta_out) *meta_out = std::move(meta);
  return model;
}

}  // namespace supra
