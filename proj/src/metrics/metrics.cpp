#include "supra/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

namespace supra {

namespace {

void require_nonempty(std::span<const int> pred, std::span<const int> gt, const char* what) {
  if (pred.empty() || gt.empty()) throw std::invalid_argument(std::string(what) + ": empty label sequence");
}

void require_threshold(double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw std::invalid_argument("f1_overlap: threshold " + std::to_string(threshold) + " outside (0, 1]");
  }
}

double percent(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

std::vector<Segment> segments_from_frames(std::span<const int> labels) {
  if (labels.empty()) throw std::invalid_argument("segments_from_frames: empty label sequence");
  std::vector<Segment> out;
  std::size_t start = 0;
  for (std::size_t i = 1; i <= labels.size(); ++i) {
    if (i == labels.size() || labels[i] != labels[start]) {
      out.push_back({labels[start], start, i});
      start = i;
    }
  }
  return out;
}

std::vector<int> frames_from_segments(std::span<const Segment> segments) {
  std::vector<int> out;
  for (const auto& s : segments) out.insert(out.end(), s.length(), s.label);
  return out;
}

double edit_score(std::span<const int> pred, std::span<const int> gt) {
  require_nonempty(pred, gt, "edit_score");
  const auto p = segments_from_frames(pred);
  const auto g = segments_from_frames(gt);
  const std::size_t m = p.size(), n = g.size();
  std::vector<std::size_t> prev(n + 1), cur(n + 1);
  for (std::size_t j = 0; j <= n; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= m; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= n; ++j) {
      const std::size_t sub = prev[j - 1] + (p[i - 1].label == g[j - 1].label ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  const double score = (1.0 - static_cast<double>(prev[n]) / static_cast<double>(std::max(m, n))) * 100.0;
  return std::max(0.0, score);
}

OverlapCounts overlap_counts(std::span<const int> pred, std::span<const int> gt, double threshold) {
  require_nonempty(pred, gt, "f1_overlap");
  require_threshold(threshold);
  const auto p = segments_from_frames(pred);
  const auto g = segments_from_frames(gt);
  std::vector<bool> hit(g.size(), false);
  OverlapCounts c;
  for (const auto& ps : p) {
    double best = 0.0;
    std::size_t best_idx = g.size();
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (g[j].label != ps.label) continue;
      const std::size_t lo = std::max(ps.start, g[j].start), hi = std::min(ps.end, g[j].end);
      const std::size_t inter = hi > lo ? hi - lo : 0;
      const double iou = static_cast<double>(inter) / static_cast<double>(ps.length() + g[j].length() - inter);
      if (best_idx == g.size() || iou > best) {
        best = iou;
        best_idx = j;
      }
    }
    if (best_idx < g.size() && best >= threshold && !hit[best_idx]) {
      ++c.tp;
      hit[best_idx] = true;
    } else {
      ++c.fp;
    }
  }
  c.fn = static_cast<std::size_t>(std::count(hit.begin(), hit.end(), false));
  return c;
}

double f1_from_counts(const OverlapCounts& c) {
  const double precision = c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  const double recall = c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall) * 100.0;
}

double f1_overlap(std::span<const int> pred, std::span<const int> gt, double threshold) {
  return f1_from_counts(overlap_counts(pred, gt, threshold));
}

FrameMetrics frame_metrics(std::span<const int> pred, std::span<const int> gt, std::size_t n_classes) {
  if (pred.size() != gt.size()) {
    throw std::invalid_argument("frame_metrics: " + std::to_string(pred.size()) + " predictions for " +
                                std::to_string(gt.size()) + " frames");
  }
  std::vector<ClassCounts> counts(n_classes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int a = pred[i], b = gt[i];
    if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= n_classes || static_cast<std::size_t>(b) >= n_classes) {
      throw std::out_of_range("frame_metrics: label outside [0, " + std::to_string(n_classes) + ") at frame " +
                              std::to_string(i));
    }
    if (a == b) {
      ++correct;
      ++counts[a].tp;
    } else {
      ++counts[a].fp;
      ++counts[b].fn;
    }
  }
  return frame_metrics_from_counts(std::move(counts), correct, gt.size());
}

FrameMetrics frame_metrics_from_counts(std::vector<ClassCounts> counts, std::size_t correct, std::size_t total) {
  FrameMetrics m;
  m.correct = correct;
  m.total = total;
  m.accuracy = percent(correct, total);
  for (const auto& c : counts) {
    if (!c.present()) {
      m.precision.emplace_back();
      m.recall.emplace_back();
      m.jaccard.emplace_back();
      continue;
    }
    m.precision.emplace_back(percent(c.tp, c.tp + c.fp));
    m.recall.emplace_back(percent(c.tp, c.tp + c.fn));
    m.jaccard.emplace_back(percent(c.tp, c.tp + c.fp + c.fn));
  }
  m.counts = std::move(counts);
  return m;
}

std::vector<int> next_segment_labels(std::span<const int> gt, std::size_t k, int end_class) {
  if (k == 0) throw std::invalid_argument("next_segment_labels: k must be at least 1");
  std::vector<int> out(gt.size(), end_class);
  if (gt.empty()) return out;
  const auto segs = segments_from_frames(gt);
  std::size_t s = 0;
  for (std::size_t t = 0; t < gt.size(); ++t) {
    while (segs[s].end <= t) ++s;
    if (s + k < segs.size()) out[t] = segs[s + k].label;
  }
  return out;
}

double horizon_accuracy(std::span<const std::vector<int>> predictions, std::span<const int> gt, std::size_t k,
                        int end_class) {
  if (predictions.size() != gt.size()) {
    throw std::invalid_argument("horizon_accuracy: predictions for " + std::to_string(predictions.size()) +
                                " of " + std::to_string(gt.size()) + " frames");
  }
  const auto target = next_segment_labels(gt, k, end_class);
  std::size_t hits = 0;
  for (std::size_t t = 0; t < gt.size(); ++t) {
    if (predictions[t].size() < k) {
      throw std::invalid_argument("horizon_accuracy: frame " + std::to_string(t) + " has no prediction for k = " +
                                  std::to_string(k));
    }
    if (predictions[t][k - 1] == target[t]) ++hits;
  }
  return percent(hits, gt.size());
}

std::string threshold_key(double threshold) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", threshold);
  return buf;
}

nlohmann::json MetricReport::to_json() const {
  auto arr = [](const std::vector<std::optional<double>>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& x : v) a.push_back(x ? nlohmann::json(*x) : nlohmann::json(nullptr));
    return a;
  };
  nlohmann::json j;
  j["aggregation"] = aggregation;
  j["frame_accuracy"] = frame_accuracy;
  j["per_class"] = {{"precision", arr(precision)}, {"recall", arr(recall)}, {"jaccard", arr(jaccard)}};
  j["edit"] = edit;
  j["f1_at"] = f1_at;
  j["horizon_acc"] = horizon_acc;
  j["counts"] = {{"videos", videos}, {"frames", frames}, {"segments", segments}};
  return j;
}

std::string MetricReport::canonical() const { return to_json().dump(2) + "\n"; }

MetricReport evaluate(std::span<const VideoLabels> videos, std::size_t n_classes, std::span<const double> thresholds,
                      std::size_t horizon, Aggregation aggregation) {
  for (double th : thresholds) require_threshold(th);
  MetricReport r;
  r.aggregation = aggregation == Aggregation::PerVideo ? "per_video" : "pooled";
  r.videos = videos.size();
  r.precision.assign(n_classes, std::nullopt);
  r.recall.assign(n_classes, std::nullopt);
  r.jaccard.assign(n_classes, std::nullopt);
  if (videos.empty()) {
    for (double th : thresholds) r.f1_at[threshold_key(th)] = 0.0;
    for (std::size_t k = 1; k <= horizon; ++k) r.horizon_acc[std::to_string(k)] = 0.0;
    return r;
  }
  const int end_class = static_cast<int>(n_classes);

  std::vector<double> acc, edits;
  std::vector<std::vector<double>> prec(n_classes), rec(n_classes), jac(n_classes);
  std::vector<std::vector<double>> f1(thresholds.size());
  std::vector<OverlapCounts> pooled_overlap(thresholds.size());
  std::vector<std::vector<double>> hz(horizon);
  std::vector<std::size_t> hz_hits(horizon, 0);
  std::vector<ClassCounts> pooled_counts(n_classes);
  std::size_t pooled_correct = 0;

  for (const auto& v : videos) {
    const FrameMetrics fm = frame_metrics(v.pred, v.gt, n_classes);
    r.frames += v.gt.size();
    r.segments += segments_from_frames(v.gt).size();
    acc.push_back(fm.accuracy);
    pooled_correct += fm.correct;
    for (std::size_t c = 0; c < n_classes; ++c) {
      pooled_counts[c].tp += fm.counts[c].tp;
      pooled_counts[c].fp += fm.counts[c].fp;
      pooled_counts[c].fn += fm.counts[c].fn;
      if (fm.precision[c]) {
        prec[c].push_back(*fm.precision[c]);
        rec[c].push_back(*fm.recall[c]);
        jac[c].push_back(*fm.jaccard[c]);
      }
    }
    edits.push_back(edit_score(v.pred, v.gt));
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      const OverlapCounts oc = overlap_counts(v.pred, v.gt, thresholds[i]);
      f1[i].push_back(f1_from_counts(oc));
      pooled_overlap[i].tp += oc.tp;
      pooled_overlap[i].fp += oc.fp;
      pooled_overlap[i].fn += oc.fn;
    }
    for (std::size_t k = 1; k <= horizon; ++k) {
      const double a = horizon_accuracy(v.next, v.gt, k, end_class);
      hz[k - 1].push_back(a);
      const auto target = next_segment_labels(v.gt, k, end_class);
      for (std::size_t t = 0; t < v.gt.size(); ++t) hz_hits[k - 1] += v.next[t][k - 1] == target[t] ? 1 : 0;
    }
  }

  r.edit = mean_of(edits);
  if (aggregation == Aggregation::PerVideo) {
    r.frame_accuracy = mean_of(acc);
    for (std::size_t c = 0; c < n_classes; ++c) {
      if (prec[c].empty()) continue;
      r.precision[c] = mean_of(prec[c]);
      r.recall[c] = mean_of(rec[c]);
      r.jaccard[c] = mean_of(jac[c]);
    }
    for (std::size_t i = 0; i < thresholds.size(); ++i) r.f1_at[threshold_key(thresholds[i])] = mean_of(f1[i]);
    for (std::size_t k = 1; k <= horizon; ++k) r.horizon_acc[std::to_string(k)] = mean_of(hz[k - 1]);
  } else {
    const FrameMetrics fm = frame_metrics_from_counts(pooled_counts, pooled_correct, r.frames);
    r.frame_accuracy = fm.accuracy;
    r.precision = fm.precision;
    r.recall = fm.recall;
    r.jaccard = fm.jaccard;
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      r.f1_at[threshold_key(thresholds[i])] = f1_from_counts(pooled_overlap[i]);
    }
    for (std::size_t k = 1; k <= horizon; ++k) r.horizon_acc[std::to_string(k)] = percent(hz_hits[k - 1], r.frames);
  }
  return r;
}

}  // namespace supra
