#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "supra/config.hpp"
#include "supra/dataio.hpp"
#include "supra/metrics.hpp"
#include "supra/model.hpp"

namespace supra {

// generate --------------------------------------------------------------

/// Writes annotations/, features/ and manifest.json under `out_dir`.
Manifest generate_to_disk(const GeneratorConfig& config, const std::filesystem::path& out_dir);

// train -----------------------------------------------------------------

struct TrainOptions {
  std::filesystem::path manifest;
  std::filesystem::path run_dir;
  /// Stop after this many completed epochs; the schedule still spans optimizer.epochs.
  std::optional<std::size_t> max_epochs;
  /// Continue from a checkpoint written by an earlier run of the same config.
  std::optional<std::filesystem::path> resume;
  /// Called with each log record after it is written.
  std::function<void(const nlohmann::json&)> on_record;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::size_t epochs_completed = 0;
  double seconds = 0.0;
};

std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& run_dir, std::size_t epoch);

/// Deterministic given the config: the clip order of each epoch and the
/// dropout stream of each step derive from (seed, epoch, step). Writes
/// train.jsonl, checkpoints/epoch_NNN.ckpt after every epoch and final.ckpt.
TrainResult train(const RunConfig& config, const TrainOptions& options);

// inference -------------------------------------------------------------

struct FramePrediction {
  std::size_t frame = 0;
  int phase = 0;
  std::vector<float> probs;
  std::vector<int> next_phases;            // argmax per query, C = END
  std::vector<float> next_durations_sec;   // de-normalized
  std::vector<float> running_max;          // key state after this frame
};

/// Online inference over one video. The default streams frame by frame; with
/// `batch` every frame is predicted from a full clip plus its key carry.
std::vector<FramePrediction> predict_video(Model& model, const Tensor& features, bool batch = false);

nlohmann::json prediction_record(const FramePrediction& p);

/// Per-track segment lists for timeline rendering: "recognition",
/// "prediction_k" for each horizon and "ground_truth" when labels are given.
nlohmann::json timeline_document(const std::string& video_id, const std::vector<FramePrediction>& predictions,
                                 const std::vector<std::string>& class_names, const std::vector<int>* ground_truth);

// eval ------------------------------------------------------------------

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path manifest;
  std::string split = "test";
  bool batch = false;
  /// Score the ground truth against itself (checks the metric plumbing).
  bool oracle = false;
  Aggregation aggregation = Aggregation::PerVideo;
  std::vector<double> thresholds{0.10, 0.25, 0.50};
  /// Optional JSON-lines dump of every per-frame prediction.
  std::optional<std::filesystem::path> dump;
};

MetricReport evaluate_checkpoint(const EvalOptions& options);

/// Scores an already loaded model; `dump_lines` receives one record per frame when non-null.
MetricReport evaluate_model(Model& model, const std::vector<LoadedVideo>& videos, const EvalOptions& options,
                            std::vector<std::string>* dump_lines = nullptr);

// metrics ---------------------------------------------------------------

/// Scores label files (or directories of them, matched by file name) against
/// ground truth. Without a class list the classes are the sorted union of names.
MetricReport score_annotation_files(const std::filesystem::path& pred, const std::filesystem::path& gt,
                                    std::vector<std::string> classes, const std::vector<double>& thresholds,
                                    Aggregation aggregation);

// ablate ----------------------------------------------------------------

/// Trains and evaluates every (n_queries, seed) pair of config.ablation on
/// one dataset and returns the per-run scores plus medians per n_queries.
nlohmann::json run_ablation(const RunConfig& config, const std::filesystem::path& manifest,
                            const std::filesystem::path& out_dir, std::optional<std::size_t> max_epochs = {},
                            const std::function<void(const std::string&)>& progress = {});

}  // namespace supra
