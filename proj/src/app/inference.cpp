#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "supra/app.hpp"
#include "supra/checkpoint.hpp"
#include "supra/container.hpp"
#include "supra/errors.hpp"
#include "supra/objectives.hpp"
#include "supra/ops.hpp"
#include "supra/streaming.hpp"

namespace supra {

namespace {

int argmax_row(std::span<const float> row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

void fill_segments(FramePrediction& p, const SegmentPrediction& seg, const ModelConfig& cfg) {
  const std::size_t nq = seg.next_phase_logits.dim(0), c1 = seg.next_phase_logits.dim(1);
  for (std::size_t q = 0; q < nq; ++q) {
    p.next_phases.push_back(argmax_row(seg.next_phase_logits.values().subspan(q * c1, c1)));
    p.next_durations_sec.push_back(
        denormalize_duration(seg.durations.at(q), static_cast<float>(cfg.duration_scale)));
  }
}

std::string label_name(int label, const std::vector<std::string>& classes) {
  if (label >= 0 && static_cast<std::size_t>(label) < classes.size()) return classes[label];
  return static_cast<std::size_t>(label) == classes.size() ? "END" : std::to_string(label);
}

nlohmann::json segment_track(const std::vector<int>& labels, const std::vector<std::string>& classes) {
  nlohmann::json track = nlohmann::json::array();
  if (labels.empty()) return track;
  for (const auto& s : segments_from_frames(labels)) {
    track.push_back({{"label", s.label}, {"name", label_name(s.label, classes)}, {"start", s.start}, {"end", s.end}});
  }
  return track;
}

}  // namespace

std::vector<FramePrediction> predict_video(Model& model, const Tensor& features, bool batch) {
  const ModelConfig& cfg = model.config();
  if (features.rank() != 2 || features.dim(1) != cfg.d_feat) {
    throw ConfigError("features " + shape_str(features.shape()) + " do not match model.d_feat = " +
                      std::to_string(cfg.d_feat));
  }
  const bool was_training = model.training();
  model.set_training(false);
  const std::size_t n = features.dim(0);
  std::vector<FramePrediction> out;
  out.reserve(n);
  if (!batch) {
    StreamingEngine engine(model);
    for (std::size_t t = 0; t < n; ++t) {
      StreamingOutput s = engine.step(features.values().subspan(t * cfg.d_feat, cfg.d_feat));
      FramePrediction p;
      p.frame = t;
      p.phase = static_cast<int>(s.phase);
      p.probs = std::move(s.probs);
      if (s.segments) fill_segments(p, *s.segments, cfg);
      auto rm = s.bank.running_max.values();
      p.running_max.assign(rm.begin(), rm.end());
      out.push_back(std::move(p));
    }
  } else {
    const std::size_t l = cfg.clip_length, w = cfg.window_length;
    // One key history per window alignment covers the carry of every clip.
    std::vector<Tensor> history(std::min(w, n));
    for (std::size_t r = 0; r < history.size(); ++r) history[r] = key_history(model, features, r, n - 1);
    NoGradGuard no_grad;
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t begin = t + 1 >= l ? t + 1 - l : 0;
      KeyCarry carry;
      if (begin > 0) {
        auto row = history[t % w].values().subspan((begin - 1) * cfg.d_key, cfg.d_key);
        carry.running_max.assign(row.begin(), row.end());
        carry.frames = begin;
      }
      ForwardOutput f = model.forward(model.embed(slice(features, 0, begin, t + 1 - begin)), carry);
      const Tensor probs = f.recognition.frame_probs();
      FramePrediction p;
      p.frame = t;
      auto last = probs.values().subspan((w - 1) * cfg.n_classes, cfg.n_classes);
      p.probs.assign(last.begin(), last.end());
      p.phase = argmax_row(last);
      if (f.segments) fill_segments(p, *f.segments, cfg);
      auto rm = f.bank.running_max.values();
      p.running_max.assign(rm.begin(), rm.end());
      out.push_back(std::move(p));
    }
  }
  model.set_training(was_training);
  return out;
}

nlohmann::json prediction_record(const FramePrediction& p) {
  return {{"frame", p.frame},
          {"phase", p.phase},
          {"probs", p.probs},
          {"next_phases", p.next_phases},
          {"next_durations_sec", p.next_durations_sec}};
}

nlohmann::json timeline_document(const std::string& video_id, const std::vector<FramePrediction>& predictions,
                                 const std::vector<std::string>& class_names, const std::vector<int>* ground_truth) {
  nlohmann::json tracks = nlohmann::json::object();
  std::vector<int> rec;
  for (const auto& p : predictions) rec.push_back(p.phase);
  tracks["recognition"] = segment_track(rec, class_names);
  const std::size_t horizons = predictions.empty() ? 0 : predictions.front().next_phases.size();
  for (std::size_t k = 0; k < horizons; ++k) {
    std::vector<int> labels;
    for (const auto& p : predictions) labels.push_back(p.next_phases[k]);
    tracks["prediction_" + std::to_string(k + 1)] = segment_track(labels, class_names);
  }
  if (ground_truth) tracks["ground_truth"] = segment_track(*ground_truth, class_names);
  nlohmann::json names = class_names;
  names.push_back("END");
  return {{"video_id", video_id}, {"fps", 1}, {"frames", predictions.size()}, {"labels", names}, {"tracks", tracks}};
}

MetricReport evaluate_model(Model& model, const std::vector<LoadedVideo>& videos, const EvalOptions& options,
                            std::vector<std::string>* dump_lines) {
  const ModelConfig& cfg = model.config();
  const int end_class = static_cast<int>(cfg.end_class());
  std::vector<VideoLabels> scored;
  for (const auto& v : videos) {
    VideoLabels vl;
    vl.video_id = v.annotation.video_id;
    vl.gt = v.annotation.frame_labels;
    for (int label : vl.gt) {
      if (static_cast<std::size_t>(label) >= cfg.n_classes) {
        throw ConfigError(vl.video_id + " uses more phases than model.n_classes = " + std::to_string(cfg.n_classes));
      }
    }
    if (options.oracle) {
      vl.pred = vl.gt;
      vl.next.assign(vl.gt.size(), {});
      for (std::size_t k = 1; k <= cfg.n_queries; ++k) {
        const auto target = next_segment_labels(vl.gt, k, end_class);
        for (std::size_t t = 0; t < vl.gt.size(); ++t) vl.next[t].push_back(target[t]);
      }
    } else {
      const auto preds = predict_video(model, v.features.features, options.batch);
      for (const auto& p : preds) {
        vl.pred.push_back(p.phase);
        vl.next.push_back(p.next_phases);
        if (dump_lines) {
          nlohmann::json rec = prediction_record(p);
          rec["video_id"] = vl.video_id;
          dump_lines->push_back(rec.dump());
        }
      }
    }
    scored.push_back(std::move(vl));
  }
  return evaluate(scored, cfg.n_classes, options.thresholds, cfg.n_queries, options.aggregation);
}

MetricReport evaluate_checkpoint(const EvalOptions& options) {
  Model model = load_model(options.checkpoint);
  const auto videos = load_videos(options.manifest, options.split);
  std::vector<std::string> lines;
  MetricReport report = evaluate_model(model, videos, options, options.dump ? &lines : nullptr);
  if (options.dump) {
    std::string text;
    for (const auto& l : lines) text += l + "\n";
    write_file(*options.dump, text);
  }
  return report;
}

MetricReport score_annotation_files(const std::filesystem::path& pred, const std::filesystem::path& gt,
                                    std::vector<std::string> classes, const std::vector<double>& thresholds,
                                    Aggregation aggregation) {
  namespace fs = std::filesystem;
  std::vector<std::pair<fs::path, fs::path>> pairs;
  if (fs::is_directory(pred) != fs::is_directory(gt)) {
    throw DataError("metrics: compare two files or two directories");
  }
  if (fs::is_directory(gt)) {
    auto list = [](const fs::path& dir) {
      std::set<std::string> names;
      for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".csv") names.insert(e.path().filename().string());
      }
      return names;
    };
    const auto pn = list(pred), gn = list(gt);
    if (pn != gn) {
      std::string diff;
      for (const auto& n : gn) {
        if (!pn.count(n)) diff += " missing prediction for " + n + ";";
      }
      for (const auto& n : pn) {
        if (!gn.count(n)) diff += " no ground truth for " + n + ";";
      }
      throw DataError("metrics: video id mismatch:" + diff);
    }
    for (const auto& n : gn) pairs.emplace_back(pred / n, gt / n);
  } else {
    pairs.emplace_back(pred, gt);
  }

  if (classes.empty()) {
    std::set<std::string> names;
    for (const auto& [p, g] : pairs) {
      for (const fs::path& f : {p, g}) {
        std::istringstream in(read_file(f));
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
          if (!line.empty() && line.back() == '\r') line.pop_back();
          const auto comma = line.find(',');
          if (comma != std::string::npos) names.insert(line.substr(comma + 1));
        }
      }
    }
    classes.assign(names.begin(), names.end());
  }
  std::map<std::string, int> class_map;
  for (std::size_t i = 0; i < classes.size(); ++i) class_map[classes[i]] = static_cast<int>(i);

  std::vector<VideoLabels> videos;
  for (const auto& [p, g] : pairs) {
    VideoAnnotation pa = load_annotation(p, class_map), ga = load_annotation(g, class_map);
    if (pa.length() != ga.length()) {
      throw DataError("metrics: " + g.filename().string() + " has " + std::to_string(ga.length()) +
                      " frames but the prediction has " + std::to_string(pa.length()));
    }
    videos.push_back({ga.video_id, std::move(pa.frame_labels), std::move(ga.frame_labels), {}});
  }
  return evaluate(videos, classes.size(), thresholds, 0, aggregation);
}

Manifest generate_to_disk(const GeneratorConfig& config, const std::filesystem::path& out_dir) {
  const auto videos = generate_dataset(config);
  const auto splits = assign_splits(videos.size(), config.split, config.seed);
  Manifest m;
  m.classes = default_class_names(config.n_classes);
  m.d_feat = config.d_feat;
  for (std::size_t i = 0; i < videos.size(); ++i) {
    const auto& v = videos[i];
    const std::string id = v.annotation.video_id;
    ManifestEntry e{id, splits[i], "annotations/" + id + ".csv", "features/" + id + ".bin", v.annotation.length()};
    save_annotation(out_dir / e.annotation, v.annotation, m.classes);
    save_features(out_dir / e.features, v.features);
    m.videos.push_back(std::move(e));
  }
  save_manifest(out_dir / "manifest.json", m);
  return m;
}

nlohmann::json run_ablation(const RunConfig& config, const std::filesystem::path& manifest,
                            const std::filesystem::path& out_dir, std::optional<std::size_t> max_epochs,
                            const std::function<void(const std::string&)>& progress) {
  const auto test = load_videos(manifest, config.eval.split);
  nlohmann::json runs = nlohmann::json::array();
  nlohmann::json medians = nlohmann::json::array();
  for (std::size_t nq : config.ablation.n_queries) {
    std::vector<double> rec;
    std::map<std::string, std::vector<double>> pred;
    for (std::uint64_t seed : config.ablation.seeds) {
      RunConfig rc = config;
      rc.model.n_queries = nq;
      rc.seed = seed;
      TrainOptions to;
      to.manifest = manifest;
      to.run_dir = out_dir / ("nq" + std::to_string(nq) + "_seed" + std::to_string(seed));
      to.max_epochs = max_epochs;
      const TrainResult tr = train(rc, to);
      Model model = load_model(tr.final_checkpoint);
      EvalOptions eo;
      eo.thresholds = config.eval.thresholds;
      eo.aggregation = config.eval.mode();
      const MetricReport r = evaluate_model(model, test, eo);
      rec.push_back(r.frame_accuracy);
      for (const auto& [k, v] : r.horizon_acc) pred[k].push_back(v);
      runs.push_back({{"n_queries", nq},
                      {"seed", seed},
                      {"acc_rec", r.frame_accuracy},
                      {"acc_pred", r.horizon_acc},
                      {"edit", r.edit}});
      if (progress) progress(runs.back().dump());
    }
    auto median = [](std::vector<double> v) {
      std::sort(v.begin(), v.end());
      const std::size_t n = v.size();
      return n == 0 ? 0.0 : n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    nlohmann::json row = {{"n_queries", nq}, {"acc_rec", median(rec)}};
    nlohmann::json mp = nlohmann::json::object();
    for (const auto& [k, v] : pred) mp[k] = median(v);
    row["acc_pred"] = mp;
    medians.push_back(row);
  }
  return {{"metric", "median over seeds, percent"},
          {"seeds", config.ablation.seeds},
          {"table", medians},
          {"runs", runs}};
}

}  // namespace supra
