#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

#include "supra/app.hpp"
#include "supra/checkpoint.hpp"
#include "supra/errors.hpp"
#include "supra/objectives.hpp"
#include "supra/ops.hpp"

namespace supra {

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t x = seed;
  for (std::uint64_t v : {a, b}) {
    x ^= v + 0x9e3779b97f4a7c15ull + (x << 6) + (x >> 2);
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    x ^= x >> 31;
  }
  return x;
}

struct ClipRef {
  std::size_t video;
  std::size_t t;
};

std::vector<ClipRef> epoch_plan(const std::vector<LoadedVideo>& videos, std::size_t clips_per_video,
                                std::uint64_t seed, std::size_t epoch) {
  std::mt19937_64 rng(derive_seed(seed, 0xc11f5ull, epoch));
  std::vector<ClipRef> plan;
  for (std::size_t v = 0; v < videos.size(); ++v) {
    std::uniform_int_distribution<std::size_t> pick(0, videos[v].annotation.length() - 1);
    for (std::size_t i = 0; i < clips_per_video; ++i) plan.push_back({v, pick(rng)});
  }
  std::shuffle(plan.begin(), plan.end(), rng);
  return plan;
}

nlohmann::json training_extra(const RunConfig& c) {
  return {{"loss", to_json(c.loss)}, {"optimizer", to_json(c.optimizer)}, {"key_targets", c.key_targets}};
}

}  // namespace

std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& run_dir, std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03zu.ckpt", epoch);
  return run_dir / "checkpoints" / buf;
}

TrainResult train(const RunConfig& config, const TrainOptions& options) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  const auto& oc = config.optimizer;
  std::vector<LoadedVideo> videos = load_videos(options.manifest, "train");
  if (videos.empty()) throw DataError(options.manifest.string() + ": no training videos");
  for (const auto& v : videos) {
    if (v.features.features.dim(1) != config.model.d_feat) {
      throw ConfigError("model.d_feat = " + std::to_string(config.model.d_feat) + " but " +
                        v.annotation.video_id + " has " + std::to_string(v.features.features.dim(1)) +
                        " feature columns");
    }
    for (int label : v.annotation.frame_labels) {
      if (static_cast<std::size_t>(label) >= config.model.n_classes) {
        throw ConfigError("dataset has more phases than model.n_classes = " + std::to_string(config.model.n_classes));
      }
    }
  }

  Model model(config.model, config.seed);
  OptimizerState opt;
  opt.schedule = oc.schedule();
  opt.momentum = oc.momentum;
  opt.weight_decay = oc.weight_decay;
  opt.grad_clip = oc.grad_clip;
  std::size_t start_epoch = 0;
  if (options.resume) {
    const Container c = read_container(*options.resume);
    const CheckpointMeta meta = checkpoint_meta(c);
    if (!(meta.config == config.model) || meta.seed != config.seed || meta.extra != training_extra(config)) {
      throw ConfigError("resume checkpoint " + options.resume->string() + " was written by a different config");
    }
    load_parameters(model, c);
    load_optimizer(opt, model, c);
    start_epoch = static_cast<std::size_t>(meta.epoch);
  }

  std::filesystem::create_directories(options.run_dir / "checkpoints");
  std::ofstream log(options.run_dir / "train.jsonl", options.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot write " + (options.run_dir / "train.jsonl").string());
  auto emit = [&](const nlohmann::json& record) {
    log << record.dump() << "\n";
    log.flush();
    if (options.on_record) options.on_record(record);
  };

  const bool anticipate = config.model.n_queries > 0;
  const bool key_targets = anticipate && config.key_targets;
  const std::size_t last_epoch = std::min(oc.epochs, options.max_epochs.value_or(oc.epochs));
  TrainResult result;
  result.epochs_completed = start_epoch;
  std::filesystem::path last_ckpt = start_epoch > 0 && options.resume ? *options.resume : std::filesystem::path{};

  model.set_training(true);
  for (std::size_t epoch = start_epoch; epoch < last_epoch; ++epoch) {
    const auto plan = epoch_plan(videos, oc.clips_per_video, config.seed, epoch);
    const std::size_t n_batches = (plan.size() + oc.batch_size - 1) / oc.batch_size;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const auto step_started = std::chrono::steady_clock::now();
      const std::size_t first = b * oc.batch_size;
      const std::size_t count = std::min(oc.batch_size, plan.size() - first);
      model.parameters().zero_grad();
      std::map<std::string, double> terms;
      double total = 0.0;
      try {
        for (std::size_t i = 0; i < count; ++i) {
          const ClipRef ref = plan[first + i];
          const LoadedVideo& v = videos[ref.video];
          model.seed_dropout(derive_seed(config.seed, epoch * 1000003ull + b, i + 1));
          TrainingSample s = sample_clip(model, v.annotation, v.features.features, ref.t, key_targets);
          ForwardOutput out = model.forward(s.clip, s.carry);
          LossBreakdown loss = total_loss(out.recognition, out.segments ? &*out.segments : nullptr, s.labels,
                                          anticipate ? &s.targets : nullptr, config.loss);
          const float value = loss.total.item();
          if (!std::isfinite(value)) throw NumericError("non-finite loss");
          total += value / static_cast<double>(count);
          for (const auto& [k, x] : loss.terms) terms[k] += x / static_cast<double>(count);
          mul_scalar(loss.total, 1.0f / static_cast<float>(count)).backward();
        }
      } catch (const NumericError& e) {
        emit({{"event", "numeric_failure"},
              {"epoch", epoch + 1},
              {"step", opt.step + 1},
              {"message", e.what()},
              {"seed", config.seed}});
        throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) + ", step " +
                           std::to_string(opt.step + 1) + ": " + e.what());
      }
      const double epoch_fraction = static_cast<double>(epoch) + static_cast<double>(b) / n_batches;
      const double lr = sgd_step(model.parameters(), opt, epoch_fraction);
      nlohmann::json losses(terms);
      losses["total"] = total;
      const auto now = std::chrono::steady_clock::now();
      emit({{"epoch", epoch + 1},
            {"step", opt.step},
            {"lr", lr},
            {"loss", losses},
            {"clips", count},
            {"seed", config.seed},
            {"wall_ms", std::chrono::duration<double, std::milli>(now - step_started).count()}});
    }
    CheckpointMeta meta{config.model, static_cast<std::int64_t>(epoch + 1), config.seed, training_extra(config)};
    last_ckpt = epoch_checkpoint_path(options.run_dir, epoch + 1);
    save_checkpoint(last_ckpt, model, meta, &opt);
    result.epochs_completed = epoch + 1;
  }

  model.set_training(false);
  result.final_checkpoint = options.run_dir / "final.ckpt";
  CheckpointMeta meta{config.model, static_cast<std::int64_t>(result.epochs_completed), config.seed,
                      training_extra(config)};
  save_checkpoint(result.final_checkpoint, model, meta, &opt);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace supra
