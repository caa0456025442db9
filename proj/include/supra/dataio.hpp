#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "supra/metrics.hpp"
#include "supra/model.hpp"
#include "supra/objectives.hpp"
#include "supra/tensor.hpp"

namespace supra {

struct VideoAnnotation {
  std::string video_id;
  int fps = 1;
  std::vector<int> frame_labels;
  std::vector<Segment> segments;

  static VideoAnnotation from_labels(std::string video_id, std::vector<int> labels);
  std::size_t length() const { return frame_labels.size(); }
};

struct FeatureSequence {
  std::string video_id;
  Tensor features;  // [T, d_feat]
};

struct SplitWeights {
  double train = 40.0, val = 5.0, test = 10.0;
  bool operator==(const SplitWeights&) const = default;
};

struct GeneratorConfig {
  std::size_t n_classes = 7;
  std::size_t n_videos = 55;
  /// Per-class log-mean / log-std of segment durations in seconds. Empty
  /// vectors select the built-in defaults (mean video ~300 frames at C = 7).
  std::vector<double> duration_log_mean;
  std::vector<double> duration_log_std;
  double p_adv = 0.8;
  double p_skip = 0.08;
  double p_back = 0.07;
  /// Segments after which every transition advances, bounding video length.
  std::size_t max_segments = 21;
  std::size_t d_feat = 32;
  double class_scale = 1.0;
  double ramp_scale = 0.5;
  double noise_std = 0.35;
  std::uint64_t seed = 0;
  SplitWeights split;

  void validate() const;
  double log_mean(std::size_t c) const;
  double log_std(std::size_t c) const;
  bool operator==(const GeneratorConfig&) const = default;
};

struct GeneratedVideo {
  VideoAnnotation annotation;
  FeatureSequence features;
};

std::vector<GeneratedVideo> generate_dataset(const GeneratorConfig& config);

/// "train" / "val" / "test" for each of n videos; a pure function of its arguments.
std::vector<std::string> assign_splits(std::size_t n_videos, const SplitWeights& weights, std::uint64_t seed);

std::vector<std::string> default_class_names(std::size_t n_classes);

void save_annotation(const std::filesystem::path& path, const VideoAnnotation& annotation,
                     const std::vector<std::string>& class_names);
/// Parses "index,phase" lines after an optional "frame,phase" header. The
/// video id is the file stem.
VideoAnnotation load_annotation(const std::filesystem::path& path, const std::map<std::string, int>& class_map);

void save_features(const std::filesystem::path& path, const FeatureSequence& features);
FeatureSequence load_features(const std::filesystem::path& path);

struct ManifestEntry {
  std::string video_id;
  std::string split;
  std::string annotation;  // relative to the manifest directory
  std::string features;
  std::size_t frames = 0;
};

struct Manifest {
  std::vector<std::string> classes;
  std::size_t d_feat = 0;
  std::vector<ManifestEntry> videos;

  std::map<std::string, int> class_map() const;
  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
};

void save_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest load_manifest(const std::filesystem::path& path);

struct LoadedVideo {
  VideoAnnotation annotation;
  FeatureSequence features;
  std::string split;
};

/// Loads every video of the manifest (or those of one split) and checks that
/// labels and features line up.
std::vector<LoadedVideo> load_videos(const std::filesystem::path& manifest_path, const std::string& split = "");

/// One training example ending at frame t.
struct TrainingSample {
  Clip clip;                // frames (t - l, t] through the input adapter, left-padded
  std::vector<int> labels;  // [w], kIgnoreIndex on padded frames
  KeyCarry carry;           // key state over frames before the clip
  AnticipationTargets targets;
};

/// Builds the clip, labels, carry and (for anticipation models) the targets,
/// with next-key targets when `with_key_targets` is set.
TrainingSample sample_clip(Model& model, const VideoAnnotation& annotation, const Tensor& features, std::size_t t,
                           bool with_key_targets);

}  // namespace supra
