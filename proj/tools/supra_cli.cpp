// supra: generate / train / eval / predict / metrics / ablate.

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "supra/app.hpp"
#include "supra/checkpoint.hpp"
#include "supra/config.hpp"
#include "supra/container.hpp"
#include "supra/errors.hpp"

namespace fs = std::filesystem;
using namespace supra;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kConfig = 2, kData = 3, kNumeric = 4 };

const char* kFooter =
    "Exit codes: 0 success, 1 usage or other error, 2 invalid config or\n"
    "config/checkpoint mismatch, 3 missing or malformed data, 4 numeric failure.";

RunConfig config_or_default(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

fs::path manifest_in(const std::string& dir_or_file) {
  fs::path p(dir_or_file);
  return fs::is_directory(p) ? p / "manifest.json" : p;
}

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_file(path, text);
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Surgical phase recognition and anticipation on feature sequences"};
  app.footer(kFooter);
  app.require_subcommand(1);

  std::string config_path;

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset (annotations, features, manifest)");
  std::string gen_out;
  std::optional<std::size_t> gen_videos;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--config", config_path, "Run config (JSON)");
  gen->add_option("--out", gen_out, "Output directory (default: paths.data_dir)");
  gen->add_option("--n-videos", gen_videos, "Override generator.n_videos");
  gen->add_option("--seed", gen_seed, "Override generator.seed");

  // train
  auto* tr = app.add_subcommand("train", "Train a model; writes train.jsonl and checkpoints to the run dir");
  std::string tr_data, tr_run, tr_resume;
  std::optional<std::size_t> tr_max_epochs;
  std::optional<std::uint64_t> tr_seed;
  bool tr_quiet = false;
  tr->add_option("--config", config_path, "Run config (JSON)");
  tr->add_option("--data", tr_data, "Dataset directory or manifest (default: paths.data_dir)");
  tr->add_option("--run-dir", tr_run, "Run directory (default: paths.run_dir)");
  tr->add_option("--resume", tr_resume, "Continue from an epoch checkpoint");
  tr->add_option("--max-epochs", tr_max_epochs, "Stop after this many epochs (schedule unchanged)");
  tr->add_option("--seed", tr_seed, "Override the run seed");
  tr->add_flag("--quiet", tr_quiet, "Do not echo log records");

  // eval
  auto* ev = app.add_subcommand("eval", "Stream a checkpoint over a split and report metrics");
  std::string ev_ckpt, ev_data, ev_split = "test", ev_out, ev_dump, ev_thresholds = "0.10,0.25,0.50";
  bool ev_batch = false, ev_oracle = false, ev_pooled = false;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--data", ev_data, "Dataset directory or manifest")->required();
  ev->add_option("--split", ev_split, "Split to evaluate");
  ev->add_option("--thresholds", ev_thresholds, "Comma-separated F1 overlap thresholds");
  ev->add_flag("--batch", ev_batch, "Predict each frame from a batch clip instead of streaming");
  ev->add_flag("--oracle", ev_oracle, "Score the ground truth as the prediction");
  ev->add_flag("--pooled", ev_pooled, "Pool frames and segments across videos instead of averaging videos");
  ev->add_option("--dump", ev_dump, "Write per-frame predictions (JSON lines)");
  ev->add_option("--out", ev_out, "Report path (default: stdout)");

  // predict
  auto* pr = app.add_subcommand("predict", "Per-frame online predictions and a timeline for one video");
  std::string pr_ckpt, pr_features, pr_annotation, pr_manifest, pr_out, pr_timeline, pr_keys;
  bool pr_batch = false;
  pr->add_option("--checkpoint", pr_ckpt, "Checkpoint file")->required();
  pr->add_option("--features", pr_features, "Feature file (SUPRA1 container)")->required();
  pr->add_option("--annotation", pr_annotation, "Ground-truth annotation for the timeline");
  pr->add_option("--manifest", pr_manifest, "Manifest providing class names");
  pr->add_option("--out", pr_out, "Prediction records, JSON lines (default: stdout)");
  pr->add_option("--timeline", pr_timeline, "Timeline document path");
  pr->add_option("--export-keys", pr_keys, "Write the running key state per frame (SUPRA1 container)");
  pr->add_flag("--batch", pr_batch, "Batch clips instead of streaming");

  // metrics
  auto* me = app.add_subcommand("metrics", "Score predicted label files against ground truth");
  std::string me_pred, me_gt, me_classes, me_manifest, me_out, me_thresholds = "0.10,0.25,0.50";
  bool me_pooled = false;
  me->add_option("--pred", me_pred, "Predicted annotation file or directory")->required();
  me->add_option("--gt", me_gt, "Ground-truth annotation file or directory")->required();
  me->add_option("--classes", me_classes, "Comma-separated class names in index order");
  me->add_option("--manifest", me_manifest, "Manifest providing class names");
  me->add_option("--thresholds", me_thresholds, "Comma-separated F1 overlap thresholds");
  me->add_flag("--pooled", me_pooled, "Pool across videos");
  me->add_option("--out", me_out, "Report path (default: stdout)");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Sweep n_queries x seeds; emit the recognition/anticipation matrix");
  std::string ab_data, ab_out, ab_report;
  std::optional<std::size_t> ab_max_epochs;
  ab->add_option("--config", config_path, "Run config (JSON)");
  ab->add_option("--data", ab_data, "Dataset directory or manifest (default: paths.data_dir)");
  ab->add_option("--out", ab_out, "Directory for the per-run outputs (default: <run_dir>/ablation)");
  ab->add_option("--report", ab_report, "Matrix path (default: stdout)");
  ab->add_option("--max-epochs", ab_max_epochs, "Stop each run after this many epochs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      RunConfig cfg = config_or_default(config_path);
      if (gen_videos) cfg.generator.n_videos = *gen_videos;
      if (gen_seed) cfg.generator.seed = *gen_seed;
      cfg.generator.validate();
      const fs::path out = gen_out.empty() ? fs::path(cfg.paths.data_dir) : fs::path(gen_out);
      const Manifest m = generate_to_disk(cfg.generator, out);
      std::cerr << "wrote " << m.videos.size() << " videos to " << out.string() << "\n";
    } else if (*tr) {
      RunConfig cfg = config_or_default(config_path);
      if (tr_seed) cfg.seed = *tr_seed;
      TrainOptions opts;
      opts.manifest = manifest_in(tr_data.empty() ? cfg.paths.data_dir : tr_data);
      opts.run_dir = tr_run.empty() ? fs::path(cfg.paths.run_dir) : fs::path(tr_run);
      opts.max_epochs = tr_max_epochs;
      if (!tr_resume.empty()) opts.resume = tr_resume;
      if (!tr_quiet) opts.on_record = [](const nlohmann::json& r) { std::cerr << r.dump() << "\n"; };
      const TrainResult res = train(cfg, opts);
      std::cerr << "trained " << res.epochs_completed << " epochs in " << res.seconds << " s -> "
                << res.final_checkpoint.string() << "\n";
    } else if (*ev) {
      EvalOptions opts;
      opts.checkpoint = ev_ckpt;
      opts.manifest = manifest_in(ev_data);
      opts.split = ev_split;
      opts.batch = ev_batch;
      opts.oracle = ev_oracle;
      opts.aggregation = ev_pooled ? Aggregation::Pooled : Aggregation::PerVideo;
      opts.thresholds.clear();
      for (const auto& s : split_list(ev_thresholds)) opts.thresholds.push_back(std::stod(s));
      if (!ev_dump.empty()) opts.dump = ev_dump;
      write_or_print(ev_out, evaluate_checkpoint(opts).canonical());
    } else if (*pr) {
      CheckpointMeta meta;
      Model model = load_model(pr_ckpt, &meta);
      const FeatureSequence fs_in = load_features(pr_features);
      std::vector<std::string> classes = default_class_names(meta.config.n_classes);
      if (!pr_manifest.empty()) classes = load_manifest(manifest_in(pr_manifest)).classes;
      const auto preds = predict_video(model, fs_in.features, pr_batch);
      std::string lines;
      for (const auto& p : preds) lines += prediction_record(p).dump() + "\n";
      write_or_print(pr_out, lines);
      std::optional<VideoAnnotation> gt;
      if (!pr_annotation.empty()) {
        std::map<std::string, int> cmap;
        for (std::size_t i = 0; i < classes.size(); ++i) cmap[classes[i]] = static_cast<int>(i);
        gt = load_annotation(pr_annotation, cmap);
        if (gt->length() != preds.size()) {
          throw DataError("annotation has " + std::to_string(gt->length()) + " frames, features have " +
                          std::to_string(preds.size()));
        }
      }
      if (!pr_timeline.empty()) {
        const auto doc = timeline_document(fs_in.video_id, preds, classes, gt ? &gt->frame_labels : nullptr);
        write_file(pr_timeline, doc.dump(2) + "\n");
      }
      if (!pr_keys.empty()) {
        Container c;
        c.metadata = {{"format", "supra-keys"}, {"video_id", fs_in.video_id}};
        std::vector<float> keys;
        for (const auto& p : preds) keys.insert(keys.end(), p.running_max.begin(), p.running_max.end());
        c.entries.push_back({"keys", {preds.size(), meta.config.d_key}, std::move(keys)});
        write_container(pr_keys, c);
      }
    } else if (*me) {
      std::vector<std::string> classes = split_list(me_classes);
      if (!me_manifest.empty()) classes = load_manifest(manifest_in(me_manifest)).classes;
      std::vector<double> thresholds;
      for (const auto& s : split_list(me_thresholds)) thresholds.push_back(std::stod(s));
      const MetricReport r = score_annotation_files(me_pred, me_gt, classes, thresholds,
                                                    me_pooled ? Aggregation::Pooled : Aggregation::PerVideo);
      write_or_print(me_out, r.canonical());
    } else if (*ab) {
      RunConfig cfg = config_or_default(config_path);
      const fs::path manifest = manifest_in(ab_data.empty() ? cfg.paths.data_dir : ab_data);
      const fs::path out = ab_out.empty() ? fs::path(cfg.paths.run_dir) / "ablation" : fs::path(ab_out);
      const auto table = run_ablation(cfg, manifest, out, ab_max_epochs,
                                      [](const std::string& line) { std::cerr << line << "\n"; });
      write_or_print(ab_report, table.dump(2) + "\n");
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kOk;
}
