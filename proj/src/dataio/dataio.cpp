#include "supra/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "supra/container.hpp"
#include "supra/errors.hpp"
#include "supra/ops.hpp"

namespace supra {

namespace {

// Built-in per-class mean segment lengths (frames) for the 7-phase layout.
constexpr double kDefaultMeans[] = {25, 55, 40, 60, 30, 45, 25};
constexpr double kDefaultLogStd = 0.35;

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed ^ (stream * 0x9e3779b97f4a7c15ull);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::vector<float> unit_vector(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> normal;
  std::vector<double> v(d);
  double norm = 0.0;
  for (auto& x : v) {
    x = normal(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  std::vector<float> out(d);
  for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<float>(v[i] / norm);
  return out;
}

std::vector<int> generate_labels(const GeneratorConfig& cfg, std::mt19937_64& rng) {
  std::vector<int> labels;
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const std::size_t last = cfg.n_classes - 1;
  std::size_t phase = 0;
  for (std::size_t pieces = 1;; ++pieces) {
    std::normal_distribution<double> normal(cfg.log_mean(phase), cfg.log_std(phase));
    const double frames = std::clamp(std::round(std::exp(normal(rng))), 5.0, 600.0);
    labels.insert(labels.end(), static_cast<std::size_t>(frames), static_cast<int>(phase));
    if (phase == last) break;
    if (pieces >= cfg.max_segments) {
      ++phase;
      continue;
    }
    const double u = uniform(rng);
    if (u < cfg.p_adv) {
      phase += 1;
    } else if (u < cfg.p_adv + cfg.p_skip) {
      phase = std::min(phase + 2, last);
    } else if (u < cfg.p_adv + cfg.p_skip + cfg.p_back) {
      phase = phase == 0 ? 0 : phase - 1;
    }
  }
  return labels;
}

std::string video_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "video%03zu", i);
  return buf;
}

}  // namespace

VideoAnnotation VideoAnnotation::from_labels(std::string video_id, std::vector<int> labels) {
  VideoAnnotation a;
  a.video_id = std::move(video_id);
  a.segments = segments_from_frames(labels);
  a.frame_labels = std::move(labels);
  return a;
}

void GeneratorConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("generator config: " + what); };
  if (n_classes < 2) fail("n_classes must be at least 2");
  if (d_feat == 0) fail("d_feat must be positive");
  if (max_segments == 0) fail("max_segments must be positive");
  const double ps[] = {p_adv, p_skip, p_back};
  for (double p : ps) {
    if (!(p >= 0.0 && p <= 1.0)) fail("transition probabilities must lie in [0, 1]");
  }
  if (p_adv + p_skip + p_back > 1.0 + 1e-12) fail("p_adv + p_skip + p_back must not exceed 1");
  if (!duration_log_mean.empty() && duration_log_mean.size() != n_classes) {
    fail("duration_log_mean needs one entry per class");
  }
  if (!duration_log_std.empty() && duration_log_std.size() != n_classes) {
    fail("duration_log_std needs one entry per class");
  }
  for (double s : duration_log_std) {
    if (!(s > 0.0)) fail("duration_log_std entries must be positive");
  }
  for (double m : duration_log_mean) {
    if (!std::isfinite(m)) fail("duration_log_mean entries must be finite");
  }
  if (!(noise_std > 0.0)) fail("noise_std must be positive");
  if (!(class_scale >= 0.0) || !(ramp_scale >= 0.0)) fail("class_scale and ramp_scale must be non-negative");
  if (!(split.train >= 0.0 && split.val >= 0.0 && split.test >= 0.0) || split.train + split.val + split.test <= 0.0) {
    fail("split weights must be non-negative with a positive sum");
  }
}

double GeneratorConfig::log_mean(std::size_t c) const {
  if (!duration_log_mean.empty()) return duration_log_mean.at(c);
  return std::log(n_classes == 7 ? kDefaultMeans[c] : 40.0);
}

double GeneratorConfig::log_std(std::size_t c) const {
  return duration_log_std.empty() ? kDefaultLogStd : duration_log_std.at(c);
}

std::vector<GeneratedVideo> generate_dataset(const GeneratorConfig& cfg) {
  cfg.validate();
  std::mt19937_64 fixed(stream_seed(cfg.seed, 0));
  std::vector<std::vector<float>> class_emb, ramp_dir;
  for (std::size_t c = 0; c < cfg.n_classes; ++c) class_emb.push_back(unit_vector(fixed, cfg.d_feat));
  for (std::size_t c = 0; c < cfg.n_classes; ++c) ramp_dir.push_back(unit_vector(fixed, cfg.d_feat));

  std::vector<GeneratedVideo> out;
  for (std::size_t v = 0; v < cfg.n_videos; ++v) {
    std::mt19937_64 rng(stream_seed(cfg.seed, v + 1));
    std::vector<int> labels = generate_labels(cfg, rng);
    const auto segments = segments_from_frames(labels);
    std::normal_distribution<double> noise(0.0, cfg.noise_std);
    std::vector<float> feats;
    feats.reserve(labels.size() * cfg.d_feat);
    for (const auto& seg : segments) {
      const auto& e = class_emb[seg.label];
      const auto& r = ramp_dir[seg.label];
      for (std::size_t f = seg.start; f < seg.end; ++f) {
        const double progress = static_cast<double>(f - seg.start) / static_cast<double>(seg.length());
        for (std::size_t d = 0; d < cfg.d_feat; ++d) {
          feats.push_back(static_cast<float>(cfg.class_scale * e[d] + cfg.ramp_scale * progress * r[d] + noise(rng)));
        }
      }
    }
    GeneratedVideo g;
    const std::string id = video_name(v);
    g.features = {id, Tensor::from_values({labels.size(), cfg.d_feat}, std::move(feats))};
    g.annotation = VideoAnnotation::from_labels(id, std::move(labels));
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<std::string> assign_splits(std::size_t n_videos, const SplitWeights& weights, std::uint64_t seed) {
  const double total = weights.train + weights.val + weights.test;
  if (!(total > 0.0)) throw ConfigError("split weights must have a positive sum");
  const auto count = [&](double wgt) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n_videos) * wgt / total + 0.5));
  };
  const std::size_t n_train = std::min(count(weights.train), n_videos);
  const std::size_t n_val = std::min(count(weights.val), n_videos - n_train);
  std::vector<std::size_t> order(n_videos);
  for (std::size_t i = 0; i < n_videos; ++i) order[i] = i;
  std::mt19937_64 rng(stream_seed(seed, 0x5b117ull));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::string> out(n_videos, "test");
  for (std::size_t i = 0; i < n_train; ++i) out[order[i]] = "train";
  for (std::size_t i = n_train; i < n_train + n_val; ++i) out[order[i]] = "val";
  return out;
}

std::vector<std::string> default_class_names(std::size_t n_classes) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < n_classes; ++c) names.push_back("Phase" + std::to_string(c));
  return names;
}

void save_annotation(const std::filesystem::path& path, const VideoAnnotation& annotation,
                     const std::vector<std::string>& class_names) {
  std::string text = "frame,phase\n";
  for (std::size_t i = 0; i < annotation.frame_labels.size(); ++i) {
    text += std::to_string(i) + "," + class_names.at(static_cast<std::size_t>(annotation.frame_labels[i])) + "\n";
  }
  write_file(path, text);
}

VideoAnnotation load_annotation(const std::filesystem::path& path, const std::map<std::string, int>& class_map) {
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + what);
  };
  std::vector<int> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line == "frame,phase") continue;
    if (line.empty()) fail("empty line");
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      fail("expected \"index,phase\"");
    }
    const std::string idx = line.substr(0, comma), name = line.substr(comma + 1);
    if (idx.empty() || !std::all_of(idx.begin(), idx.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      fail("frame index \"" + idx + "\" is not a non-negative integer");
    }
    if (idx.size() > 12 || std::stoull(idx) != labels.size()) {
      fail("frame index " + idx + " breaks contiguity (expected " + std::to_string(labels.size()) + ")");
    }
    auto it = class_map.find(name);
    if (it == class_map.end()) fail("unknown phase \"" + name + "\"");
    labels.push_back(it->second);
  }
  if (line_no == 0) throw DataError(path.string() + ": empty annotation file");
  if (labels.empty()) throw DataError(path.string() + ": annotation has no frames");
  return VideoAnnotation::from_labels(path.stem().string(), std::move(labels));
}

void save_features(const std::filesystem::path& path, const FeatureSequence& features) {
  Container c;
  c.metadata = {{"format", "supra-features"}, {"video_id", features.video_id}};
  auto v = features.features.values();
  c.entries.push_back({"features", features.features.shape(), {v.begin(), v.end()}});
  write_container(path, c);
}

FeatureSequence load_features(const std::filesystem::path& path) {
  const Container c = read_container(path);
  const NamedTensor* e = c.find("features");
  if (e == nullptr) throw DataError(path.string() + ": no \"features\" entry");
  if (e->shape.size() != 2 || e->shape[0] == 0 || e->shape[1] == 0) {
    throw DataError(path.string() + ": features must be a non-empty [T, d_feat] matrix, got " + shape_str(e->shape));
  }
  FeatureSequence f;
  f.video_id = c.metadata.value("video_id", path.stem().string());
  f.features = Tensor::from_values(e->shape, e->values);
  return f;
}

std::map<std::string, int> Manifest::class_map() const {
  std::map<std::string, int> m;
  for (std::size_t i = 0; i < classes.size(); ++i) m[classes[i]] = static_cast<int>(i);
  return m;
}

nlohmann::json Manifest::to_json() const {
  nlohmann::json vids = nlohmann::json::array();
  for (const auto& v : videos) {
    vids.push_back({{"id", v.video_id},
                    {"split", v.split},
                    {"annotation", v.annotation},
                    {"features", v.features},
                    {"frames", v.frames}});
  }
  return {{"format", "supra-manifest"}, {"fps", 1}, {"classes", classes}, {"d_feat", d_feat}, {"videos", vids}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
  Manifest m;
  try {
    if (j.value("format", "") != "supra-manifest") throw DataError("not a dataset manifest");
    m.classes = j.at("classes").get<std::vector<std::string>>();
    m.d_feat = j.at("d_feat").get<std::size_t>();
    for (const auto& v : j.at("videos")) {
      m.videos.push_back({v.at("id").get<std::string>(), v.at("split").get<std::string>(),
                          v.at("annotation").get<std::string>(), v.at("features").get<std::string>(),
                          v.at("frames").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  if (m.class_map().size() != m.classes.size()) throw DataError("manifest: duplicate class names");
  return m;
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  write_file(path, manifest.to_json().dump(2) + "\n");
}

Manifest load_manifest(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return Manifest::from_json(j);
}

std::vector<LoadedVideo> load_videos(const std::filesystem::path& manifest_path, const std::string& split) {
  const Manifest m = load_manifest(manifest_path);
  const auto dir = manifest_path.parent_path();
  const auto classes = m.class_map();
  std::vector<LoadedVideo> out;
  for (const auto& v : m.videos) {
    if (!split.empty() && v.split != split) continue;
    LoadedVideo lv;
    lv.annotation = load_annotation(dir / v.annotation, classes);
    lv.annotation.video_id = v.video_id;
    lv.features = load_features(dir / v.features);
    lv.split = v.split;
    if (lv.features.features.dim(0) != lv.annotation.length()) {
      throw DataError(v.video_id + ": " + std::to_string(lv.features.features.dim(0)) + " feature rows for " +
                      std::to_string(lv.annotation.length()) + " annotated frames");
    }
    if (lv.features.features.dim(1) != m.d_feat) {
      throw DataError(v.video_id + ": feature width " + std::to_string(lv.features.features.dim(1)) +
                      " differs from the manifest's " + std::to_string(m.d_feat));
    }
    out.push_back(std::move(lv));
  }
  return out;
}

TrainingSample sample_clip(Model& model, const VideoAnnotation& annotation, const Tensor& features, std::size_t t,
                           bool with_key_targets) {
  const ModelConfig& cfg = model.config();
  const std::size_t n = annotation.length();
  if (t >= n) {
    throw std::out_of_range("sample_clip: frame " + std::to_string(t) + " outside video of " + std::to_string(n) +
                            " frames");
  }
  if (features.rank() != 2 || features.dim(0) != n) {
    throw ShapeError("sample_clip: features " + shape_str(features.shape()) + " do not match " + std::to_string(n) +
                     " annotated frames");
  }
  const std::size_t l = cfg.clip_length, w = cfg.window_length;
  const std::size_t begin = t + 1 >= l ? t + 1 - l : 0;

  TrainingSample s;
  s.clip = model.embed(slice(features, 0, begin, t + 1 - begin));
  s.labels.assign(w, kIgnoreIndex);
  for (std::size_t i = 0; i < w; ++i) {
    if (t + 1 + i >= w) s.labels[i] = annotation.frame_labels[t + 1 + i - w];
  }
  const bool anticipate = cfg.n_queries > 0;
  if (anticipate) s.targets = build_anticipation_targets(annotation.frame_labels, t, cfg.n_queries, cfg);

  std::int64_t last_needed = begin > 0 ? static_cast<std::int64_t>(begin) - 1 : -1;
  if (anticipate && with_key_targets) {
    for (auto e : s.targets.segment_last) last_needed = std::max(last_needed, e);
  }
  if (last_needed < 0) {
    if (anticipate && with_key_targets) attach_key_targets(s.targets, Tensor::zeros({1, cfg.d_key}));
    return s;
  }
  const Tensor history = key_history(model, features, t, static_cast<std::size_t>(last_needed));
  if (begin > 0) {
    auto row = history.values().subspan((begin - 1) * cfg.d_key, cfg.d_key);
    s.carry.running_max.assign(row.begin(), row.end());
    s.carry.frames = begin;
  }
  if (anticipate && with_key_targets) attach_key_targets(s.targets, history);
  return s;
}

}  // namespace supra
