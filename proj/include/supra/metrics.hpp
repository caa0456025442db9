#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace supra {

struct Segment {
  int label = 0;
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // exclusive

  std::size_t length() const { return end - start; }
  bool operator==(const Segment&) const = default;
};

std::vector<Segment> segments_from_frames(std::span<const int> labels);
std::vector<int> frames_from_segments(std::span<const Segment> segments);

/// Segmental edit score in percent.
double edit_score(std::span<const int> pred, std::span<const int> gt);

struct OverlapCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
};
OverlapCounts overlap_counts(std::span<const int> pred, std::span<const int> gt, double threshold);
/// F1 in percent from raw counts; 0 when precision + recall is 0.
double f1_from_counts(const OverlapCounts& counts);
double f1_overlap(std::span<const int> pred, std::span<const int> gt, double threshold);

struct ClassCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
  bool present() const { return tp + fp + fn > 0; }
};

struct FrameMetrics {
  double accuracy = 0.0;
  std::size_t correct = 0, total = 0;
  std::vector<ClassCounts> counts;
  // Percentages; nullopt for classes absent from both sequences.
  std::vector<std::optional<double>> precision, recall, jaccard;
};
FrameMetrics frame_metrics(std::span<const int> pred, std::span<const int> gt, std::size_t n_classes);
/// Per-class scores from confusion counts (pooled over any number of videos).
FrameMetrics frame_metrics_from_counts(std::vector<ClassCounts> counts, std::size_t correct, std::size_t total);

/// Label of the k-th segment after the one containing each frame, or
/// `end_class` once the video is exhausted (k >= 1).
std::vector<int> next_segment_labels(std::span<const int> gt, std::size_t k, int end_class);

/// Percentage of frames whose predicted k-th next label (predictions[t][k-1])
/// matches the ground truth.
double horizon_accuracy(std::span<const std::vector<int>> predictions, std::span<const int> gt, std::size_t k,
                        int end_class);

enum class Aggregation { PerVideo, Pooled };

struct VideoLabels {
  std::string video_id;
  std::vector<int> pred;
  std::vector<int> gt;
  /// Optional per-frame next-segment predictions, each of length >= horizon.
  std::vector<std::vector<int>> next;
};

struct MetricReport {
  std::string aggregation;
  double frame_accuracy = 0.0;
  std::vector<std::optional<double>> precision, recall, jaccard;
  double edit = 0.0;
  std::map<std::string, double> f1_at;       // threshold formatted "0.10"
  std::map<std::string, double> horizon_acc;  // "1".."k"
  std::size_t videos = 0, frames = 0, segments = 0;

  nlohmann::json to_json() const;
  /// Sorted-key JSON, two-space indent, trailing newline.
  std::string canonical() const;
};

std::string threshold_key(double threshold);

/// Scores each video and averages them (PerVideo), or scores the pooled
/// frames and segment counts (Pooled; edit stays a per-video mean).
MetricReport evaluate(std::span<const VideoLabels> videos, std::size_t n_classes, std::span<const double> thresholds,
                      std::size_t horizon, Aggregation aggregation = Aggregation::PerVideo);

}  // namespace supra
