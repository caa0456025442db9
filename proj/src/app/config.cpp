#include "supra/config.hpp"

#include <set>
#include <type_traits>

#include "supra/container.hpp"
#include "supra/errors.hpp"

namespace supra {

namespace {

using nlohmann::json;

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seeds share the size_t conversion");

[[noreturn]] void type_error(const std::string& where, const char* expected) {
  throw ConfigError(where + ": expected " + expected);
}

void convert(const json& j, const std::string& where, double& out) {
  if (!j.is_number()) type_error(where, "a number");
  out = j.get<double>();
}
void convert(const json& j, const std::string& where, std::size_t& out) {
  if (!j.is_number_unsigned()) type_error(where, "a non-negative integer");
  out = j.get<std::size_t>();
}
void convert(const json& j, const std::string& where, bool& out) {
  if (!j.is_boolean()) type_error(where, "a boolean");
  out = j.get<bool>();
}
void convert(const json& j, const std::string& where, std::string& out) {
  if (!j.is_string()) type_error(where, "a string");
  out = j.get<std::string>();
}
template <class T>
void convert(const json& j, const std::string& where, std::vector<T>& out) {
  if (!j.is_array()) type_error(where, "an array");
  out.clear();
  for (std::size_t i = 0; i < j.size(); ++i) {
    T v{};
    convert(j[i], where + "[" + std::to_string(i) + "]", v);
    out.push_back(v);
  }
}

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) type_error(where_, "an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (j_.contains(key)) convert(j_.at(key), where_ + "." + key, out);
  }
  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string path(const char* key) const { return where_ + "." + key; }
  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError(where_ + ": unknown key \"" + item.key() + "\"");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

ModelConfig model_from(const json& j, const std::string& where) {
  ModelConfig c;
  ObjectReader r(j, where);
  r.get("clip_length", c.clip_length);
  r.get("window_length", c.window_length);
  r.get("d_feat", c.d_feat);
  r.get("d_model", c.d_model);
  r.get("d_key", c.d_key);
  r.get("d_ff", c.d_ff);
  r.get("n_classes", c.n_classes);
  r.get("n_queries", c.n_queries);
  r.get("n_heads", c.n_heads);
  r.get("n_encoder_layers", c.n_encoder_layers);
  r.get("n_decoder_layers", c.n_decoder_layers);
  r.get("n_future_layers", c.n_future_layers);
  r.get("dropout", c.dropout);
  r.get("duration_scale", c.duration_scale);
  r.get("layer_norm_eps", c.layer_norm_eps);
  r.finish();
  return c;
}

LossWeights loss_from(const json& j, const std::string& where) {
  LossWeights c;
  ObjectReader r(j, where);
  r.get("current", c.current);
  r.get("next_phase", c.next_phase);
  r.get("next_duration", c.next_duration);
  r.get("next_keys", c.next_keys);
  r.get("smoothing_weight", c.smoothing_weight);
  r.get("smoothing_clamp", c.smoothing_clamp);
  r.finish();
  return c;
}

GeneratorConfig generator_from(const json& j, const std::string& where) {
  GeneratorConfig c;
  ObjectReader r(j, where);
  r.get("n_classes", c.n_classes);
  r.get("n_videos", c.n_videos);
  r.get("duration_log_mean", c.duration_log_mean);
  r.get("duration_log_std", c.duration_log_std);
  r.get("p_adv", c.p_adv);
  r.get("p_skip", c.p_skip);
  r.get("p_back", c.p_back);
  r.get("max_segments", c.max_segments);
  r.get("d_feat", c.d_feat);
  r.get("class_scale", c.class_scale);
  r.get("ramp_scale", c.ramp_scale);
  r.get("noise_std", c.noise_std);
  r.get("seed", c.seed);
  if (const json* s = r.sub("split")) {
    ObjectReader sr(*s, r.path("split"));
    sr.get("train", c.split.train);
    sr.get("val", c.split.val);
    sr.get("test", c.split.test);
    sr.finish();
  }
  r.finish();
  return c;
}

OptimizerConfig optimizer_from(const json& j, const std::string& where) {
  OptimizerConfig c;
  ObjectReader r(j, where);
  r.get("lr", c.lr);
  r.get("momentum", c.momentum);
  r.get("weight_decay", c.weight_decay);
  r.get("warmup_epochs", c.warmup_epochs);
  r.get("epochs", c.epochs);
  r.get("grad_clip", c.grad_clip);
  r.get("batch_size", c.batch_size);
  r.get("clips_per_video", c.clips_per_video);
  r.finish();
  return c;
}

}  // namespace

LrSchedule OptimizerConfig::schedule() const {
  return LrSchedule{lr, warmup_epochs, static_cast<double>(epochs)};
}

Aggregation EvalConfig::mode() const {
  if (aggregation == "per_video") return Aggregation::PerVideo;
  if (aggregation == "pooled") return Aggregation::Pooled;
  throw ConfigError("eval.aggregation: expected \"per_video\" or \"pooled\", got \"" + aggregation + "\"");
}

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  generator.validate();
  if (generator.n_classes != model.n_classes) {
    throw ConfigError("generator.n_classes (" + std::to_string(generator.n_classes) + ") != model.n_classes (" +
                      std::to_string(model.n_classes) + ")");
  }
  if (generator.d_feat != model.d_feat) {
    throw ConfigError("generator.d_feat (" + std::to_string(generator.d_feat) + ") != model.d_feat (" +
                      std::to_string(model.d_feat) + ")");
  }
  const auto& o = optimizer;
  if (!(o.lr >= 0.0) || !(o.momentum >= 0.0 && o.momentum < 1.0) || !(o.weight_decay >= 0.0) ||
      !(o.warmup_epochs >= 0.0) || !(o.grad_clip >= 0.0)) {
    throw ConfigError("optimizer: lr, weight_decay, warmup_epochs and grad_clip must be >= 0, momentum in [0, 1)");
  }
  if (o.epochs == 0 || o.batch_size == 0 || o.clips_per_video == 0) {
    throw ConfigError("optimizer: epochs, batch_size and clips_per_video must be positive");
  }
  for (double th : eval.thresholds) {
    if (!(th > 0.0 && th <= 1.0)) throw ConfigError("eval.thresholds: " + std::to_string(th) + " outside (0, 1]");
  }
  eval.mode();
  if (eval.split.empty()) throw ConfigError("eval.split must not be empty");
  if (paths.data_dir.empty() || paths.run_dir.empty()) throw ConfigError("paths must not be empty");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"clip_length", c.clip_length},
          {"window_length", c.window_length},
          {"d_feat", c.d_feat},
          {"d_model", c.d_model},
          {"d_key", c.d_key},
          {"d_ff", c.d_ff},
          {"n_classes", c.n_classes},
          {"n_queries", c.n_queries},
          {"n_heads", c.n_heads},
          {"n_encoder_layers", c.n_encoder_layers},
          {"n_decoder_layers", c.n_decoder_layers},
          {"n_future_layers", c.n_future_layers},
          {"dropout", c.dropout},
          {"duration_scale", c.duration_scale},
          {"layer_norm_eps", c.layer_norm_eps}};
}

nlohmann::json to_json(const LossWeights& c) {
  return {{"current", c.current},
          {"next_phase", c.next_phase},
          {"next_duration", c.next_duration},
          {"next_keys", c.next_keys},
          {"smoothing_weight", c.smoothing_weight},
          {"smoothing_clamp", c.smoothing_clamp}};
}

nlohmann::json to_json(const GeneratorConfig& c) {
  return {{"n_classes", c.n_classes},
          {"n_videos", c.n_videos},
          {"duration_log_mean", c.duration_log_mean},
          {"duration_log_std", c.duration_log_std},
          {"p_adv", c.p_adv},
          {"p_skip", c.p_skip},
          {"p_back", c.p_back},
          {"max_segments", c.max_segments},
          {"d_feat", c.d_feat},
          {"class_scale", c.class_scale},
          {"ramp_scale", c.ramp_scale},
          {"noise_std", c.noise_std},
          {"seed", c.seed},
          {"split", {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}}}};
}

nlohmann::json to_json(const OptimizerConfig& c) {
  return {{"lr", c.lr},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"warmup_epochs", c.warmup_epochs},
          {"epochs", c.epochs},
          {"grad_clip", c.grad_clip},
          {"batch_size", c.batch_size},
          {"clips_per_video", c.clips_per_video}};
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)},
          {"loss", to_json(c.loss)},
          {"generator", to_json(c.generator)},
          {"optimizer", to_json(c.optimizer)},
          {"seed", c.seed},
          {"key_targets", c.key_targets},
          {"paths", {{"data_dir", c.paths.data_dir}, {"run_dir", c.paths.run_dir}}},
          {"eval", {{"thresholds", c.eval.thresholds}, {"aggregation", c.eval.aggregation}, {"split", c.eval.split}}},
          {"ablation", {{"n_queries", c.ablation.n_queries}, {"seeds", c.ablation.seeds}}}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) { return model_from(j, "model"); }
LossWeights loss_weights_from_json(const nlohmann::json& j) { return loss_from(j, "loss"); }
GeneratorConfig generator_config_from_json(const nlohmann::json& j) { return generator_from(j, "generator"); }
OptimizerConfig optimizer_config_from_json(const nlohmann::json& j) { return optimizer_from(j, "optimizer"); }

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  ObjectReader r(j, "config");
  if (const json* s = r.sub("model")) c.model = model_from(*s, "model");
  if (const json* s = r.sub("loss")) c.loss = loss_from(*s, "loss");
  if (const json* s = r.sub("generator")) c.generator = generator_from(*s, "generator");
  if (const json* s = r.sub("optimizer")) c.optimizer = optimizer_from(*s, "optimizer");
  r.get("seed", c.seed);
  r.get("key_targets", c.key_targets);
  if (const json* s = r.sub("paths")) {
    ObjectReader pr(*s, "paths");
    pr.get("data_dir", c.paths.data_dir);
    pr.get("run_dir", c.paths.run_dir);
    pr.finish();
  }
  if (const json* s = r.sub("eval")) {
    ObjectReader er(*s, "eval");
    er.get("thresholds", c.eval.thresholds);
    er.get("aggregation", c.eval.aggregation);
    er.get("split", c.eval.split);
    er.finish();
  }
  if (const json* s = r.sub("ablation")) {
    ObjectReader ar(*s, "ablation");
    ar.get("n_queries", c.ablation.n_queries);
    ar.get("seeds", c.ablation.seeds);
    ar.finish();
  }
  r.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace supra
