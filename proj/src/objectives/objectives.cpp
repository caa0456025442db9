#include "supra/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "supra/errors.hpp"
#include "supra/ops.hpp"

namespace supra {

void LossWeights::validate() const {
  const double all[] = {current, next_phase, next_duration, next_keys, smoothing_weight};
  for (double v : all) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError("loss weights must be finite and non-negative");
  }
  if (!std::isfinite(smoothing_clamp) || smoothing_clamp <= 0.0) {
    throw ConfigError("smoothing_clamp must be positive");
  }
}

Tensor consistency_cross_entropy(const Tensor& frame_logits, std::span<const int> labels, float lambda, float tau) {
  Tensor ce = cross_entropy(frame_logits, labels);
  if (lambda == 0.0f) return ce;
  // Padding only ever precedes the real frames, so the labelled frames form one run.
  std::size_t begin = 0;
  while (begin < labels.size() && labels[begin] == kIgnoreIndex) ++begin;
  std::size_t end = begin;
  while (end < labels.size() && labels[end] != kIgnoreIndex) ++end;
  const std::size_t n = end - begin;
  if (n < 2) return ce;
  Tensor logp = log_softmax(slice(frame_logits, 0, begin, n), -1);
  Tensor delta = sub(slice(logp, 0, 1, n - 1), slice(logp, 0, 0, n - 1));
  return add(ce, mul_scalar(mean(clamp_max(square(delta), tau * tau)), lambda));
}

AnticipationTargets build_anticipation_targets(std::span<const int> frame_labels, std::size_t t,
                                               std::size_t n_queries, const ModelConfig& config) {
  if (t >= frame_labels.size()) {
    throw std::out_of_range("build_anticipation_targets: frame " + std::to_string(t) + " outside video of " +
                            std::to_string(frame_labels.size()) + " frames");
  }
  AnticipationTargets out;
  const int end_class = static_cast<int>(config.end_class());
  std::size_t pos = t;
  while (pos < frame_labels.size() && frame_labels[pos] == frame_labels[t]) ++pos;
  for (std::size_t i = 0; i < n_queries; ++i) {
    if (pos >= frame_labels.size()) {
      out.next_labels.push_back(end_class);
      out.next_durations_norm.push_back(0.0f);
      out.segment_last.push_back(-1);
      continue;
    }
    std::size_t stop = pos;
    while (stop < frame_labels.size() && frame_labels[stop] == frame_labels[pos]) ++stop;
    out.next_labels.push_back(frame_labels[pos]);
    out.next_durations_norm.push_back(
        normalize_duration(static_cast<float>(stop - pos), static_cast<float>(config.duration_scale)));
    out.segment_last.push_back(static_cast<std::int64_t>(stop) - 1);
    pos = stop;
  }
  return out;
}

Tensor key_history(Model& model, const Tensor& video_features, std::size_t t, std::size_t last) {
  if (last >= video_features.dim(0)) {
    throw std::out_of_range("key_history: frames up to " + std::to_string(last) + " around t = " + std::to_string(t) +
                            " outside video of " + std::to_string(video_features.dim(0)) + " frames");
  }
  const std::size_t w = model.config().window_length;
  const bool was_training = model.training();
  model.set_training(false);
  NoGradGuard no_grad;
  // Right padding that makes a window boundary fall right after frame t.
  const std::size_t right_pad = (t % w + w - last % w) % w;
  const Clip clip = model.embed_windows(slice(video_features, 0, 0, last + 1), right_pad);
  const Tensor keys = model.project_keys(slice(model.encode_windows(clip), 0, clip.left_pad, last + 1));
  model.set_training(was_training);
  return cumulative_max_time(keys).values;
}

void attach_key_targets(AnticipationTargets& targets, const Tensor& history) {
  const std::size_t nq = targets.next_labels.size();
  const std::size_t dk = history.dim(1);
  std::vector<float> out(nq * dk, 0.0f);
  for (std::size_t i = 0; i < nq; ++i) {
    if (targets.segment_last[i] < 0) continue;
    const auto row = static_cast<std::size_t>(targets.segment_last[i]);
    if (row >= history.dim(0)) throw std::out_of_range("attach_key_targets: key history too short");
    auto src = history.values().subspan(row * dk, dk);
    std::copy(src.begin(), src.end(), out.begin() + i * dk);
  }
  targets.next_key_targets = Tensor::from_values({nq, dk}, std::move(out));
}

LossBreakdown total_loss(const RecognitionOutput& rec, const SegmentPrediction* segments,
                         std::span<const int> frame_labels, const AnticipationTargets* targets,
                         const LossWeights& weights) {
  LossBreakdown out;
  Tensor current = consistency_cross_entropy(rec.frame_logits, frame_labels,
                                             static_cast<float>(weights.smoothing_weight),
                                             static_cast<float>(weights.smoothing_clamp));
  out.terms["current"] = current.item();
  out.total = mul_scalar(current, static_cast<float>(weights.current));
  if (segments == nullptr) return out;
  if (targets == nullptr) throw std::invalid_argument("total_loss: segment predictions without targets");

  const std::size_t nq = segments->next_phase_logits.dim(0);
  if (targets->next_labels.size() != nq || targets->next_durations_norm.size() != nq) {
    throw ShapeError("total_loss: " + std::to_string(targets->next_labels.size()) + " targets for " +
                     std::to_string(nq) + " queries");
  }
  Tensor phase = cross_entropy(segments->next_phase_logits, targets->next_labels);
  Tensor duration = mse(segments->durations, Tensor::from_values({nq}, targets->next_durations_norm));
  out.terms["next_phase"] = phase.item();
  out.terms["next_duration"] = duration.item();
  out.total = add(out.total, add(mul_scalar(phase, static_cast<float>(weights.next_phase)),
                                 mul_scalar(duration, static_cast<float>(weights.next_duration))));

  if (targets->next_key_targets.defined()) {
    const std::size_t dk = segments->key_segments.dim(1);
    std::vector<std::size_t> rows;
    std::vector<float> target;
    for (std::size_t i = 0; i < nq; ++i) {
      if (targets->segment_last[i] < 0) continue;
      rows.push_back(i);
      auto src = targets->next_key_targets.values().subspan(i * dk, dk);
      target.insert(target.end(), src.begin(), src.end());
    }
    double key_value = 0.0;
    if (!rows.empty()) {
      Tensor keys = mse(embedding(segments->key_segments, rows), Tensor::from_values({rows.size(), dk}, target));
      key_value = keys.item();
      out.total = add(out.total, mul_scalar(keys, static_cast<float>(weights.next_keys)));
    }
    out.terms["next_keys"] = key_value;
  }
  return out;
}

}  // namespace supra
