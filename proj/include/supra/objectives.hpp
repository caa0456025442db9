#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "supra/model.hpp"
#include "supra/tensor.hpp"

namespace supra {

struct LossWeights {
  double current = 1.0;
  double next_phase = 1.0;
  double next_duration = 1.0;
  double next_keys = 1.0;
  double smoothing_weight = 0.15;  // lambda
  double smoothing_clamp = 4.0;    // tau

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct AnticipationTargets {
  std::vector<int> next_labels;             // [n_queries], C marks END
  std::vector<float> next_durations_norm;   // [n_queries], 0 at END
  std::vector<std::int64_t> segment_last;   // last frame of each future segment, -1 at END
  Tensor next_key_targets;                  // [n_queries, d_key]; undefined until attached
};

/// Mean frame cross-entropy plus lambda * mean(min(delta^2, tau^2)) over the
/// differences of consecutive per-class log-probabilities. Frames labelled
/// kIgnoreIndex are left out of both terms.
Tensor consistency_cross_entropy(const Tensor& frame_logits, std::span<const int> labels, float lambda, float tau);

/// Labels and normalized lengths of the segments following the one that
/// contains frame t, END-padded to n_queries entries.
AnticipationTargets build_anticipation_targets(std::span<const int> frame_labels, std::size_t t,
                                               std::size_t n_queries, const ModelConfig& config);

/// Cumulative-max keys [last + 1, d_key] of frames 0..last of a video, encoded
/// in windows aligned to end at frame t (the alignment a clip ending at t and
/// the streaming engine both use); `last` may lie before or after t. Runs in
/// inference mode without gradient.
Tensor key_history(Model& model, const Tensor& video_features, std::size_t t, std::size_t last);

/// Fills next_key_targets with rows of `history` at the last frame of each
/// future segment. END rows are zero.
void attach_key_targets(AnticipationTargets& targets, const Tensor& history);

struct LossBreakdown {
  Tensor total;
  /// Unweighted value of each active term: "current", and when anticipation
  /// is enabled "next_phase", "next_duration", "next_keys".
  std::map<std::string, double> terms;
};

/// Weighted sum of the recognition and anticipation losses. `segments` may
/// be null (recognition-only); the key term is skipped when targets carry no
/// key tensor and averages over non-END positions otherwise.
LossBreakdown total_loss(const RecognitionOutput& rec, const SegmentPrediction* segments,
                         std::span<const int> frame_labels, const AnticipationTargets* targets,
                         const LossWeights& weights);

}  // namespace supra
