// Acceptance run: one PASS/FAIL line per criterion, exit status 0 iff all pass.
//
//   supra_acceptance [--work-dir DIR] [--criteria 1,2,...] [--reuse]
//
// --reuse keeps finished training runs found in the work directory (same
// config and seed) instead of retraining them.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "reference.hpp"
#include "supra/app.hpp"
#include "supra/checkpoint.hpp"
#include "supra/errors.hpp"
#include "supra/container.hpp"
#include "supra/objectives.hpp"
#include "supra/ops.hpp"
#include "supra/streaming.hpp"

using namespace supra;
namespace fs = std::filesystem;
namespace st = supra::testing;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Tensor random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<float> n;
  std::vector<float> v(rows * cols);
  for (auto& x : v) x = n(rng);
  return Tensor::from_values({rows, cols}, std::move(v));
}

bool same(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// 1 -----------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto cases = st::all_grad_cases();
  std::size_t failed = 0;
  std::string first;
  double worst = 0.0;
  for (const auto& c : cases) {
    const auto r = st::run_gradcheck(c, 10, 1);
    if (r.failures > 0 || r.instances < 10) {
      ++failed;
      if (first.empty()) first = r.first_failure;
    }
    worst = std::max(worst, r.worst_abs);
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = failed == 0 && secs < 60.0;
  o.detail = std::to_string(cases.size() - failed) + "/" + std::to_string(cases.size()) +
             " ops pass on 10 instances each, max |err| " + fmt("%.2e", worst) + ", " + fmt("%.1f", secs) + " s";
  if (!first.empty()) o.detail += "; first failure: " + first;
  return o;
}

// 2 -----------------------------------------------------------------------

Outcome pooling_equivalence() {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> len(1, 500), width(1, 64);
  std::size_t seq_ok = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t t = len(rng), d = width(rng);
    const Tensor x = random_matrix(t, d, rng);
    const Tensor pooled = cumulative_max_time(x).values;
    RunningMax rm;
    bool ok = true;
    for (std::size_t r = 0; r < t && ok; ++r) {
      rm.update(x.values().subspan(r * d, d));
      ok = same(rm.values(), pooled.values().subspan(r * d, d));
    }
    seq_ok += ok;
  }

  std::size_t model_ok = 0;
  for (int i = 0; i < 50; ++i) {
    // Every fifth pair uses the toy architecture on a video-length input.
    const bool toy = i % 5 == 0;
    const ModelConfig cfg = toy ? ModelConfig{} : st::random_small_config(rng());
    Model model(cfg, rng());
    std::uniform_int_distribution<std::size_t> frames(1, toy ? 400 : 3 * cfg.clip_length + 3);
    const std::size_t t = frames(rng);
    const Tensor f = random_matrix(t, cfg.d_feat, rng);
    StreamingEngine engine(model);
    StreamingOutput out;
    for (std::size_t r = 0; r < t; ++r) out = engine.step(f.values().subspan(r * cfg.d_feat, cfg.d_feat));
    const ForwardOutput ref = st::batch_forward_final(model, f);
    const Tensor probs = ref.recognition.frame_probs();
    bool ok = same(out.probs, probs.values().subspan((cfg.window_length - 1) * cfg.n_classes, cfg.n_classes)) &&
              same(out.bank.running_max.values(), ref.bank.running_max.values()) &&
              same(out.bank.keys.values(), ref.bank.keys.values());
    if (ok && out.segments) {
      ok = same(out.segments->next_phase_logits.values(), ref.segments->next_phase_logits.values()) &&
           same(out.segments->durations.values(), ref.segments->durations.values());
    }
    model_ok += ok;
  }
  return {seq_ok == 1000 && model_ok == 50, std::to_string(seq_ok) + "/1000 key sequences bit-exact, " +
                                               std::to_string(model_ok) + "/50 model/input pairs bit-exact"};
}

// 3 -----------------------------------------------------------------------

Outcome metric_oracles() {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> len(1, 200);
  std::uniform_int_distribution<int> classes(1, 8);
  std::map<std::string, int> ok;
  for (int i = 0; i < 500; ++i) {
    const std::size_t n = len(rng);
    const int c = classes(rng);
    const auto gt = st::random_labels(rng, n, c);
    auto pred = st::random_labels(rng, n, c);
    if (i % 2 == 0) {
      pred = gt;
      std::uniform_int_distribution<std::size_t> pos(0, n - 1);
      std::uniform_int_distribution<int> lab(0, c - 1);
      for (std::size_t j = 0; j < n / 10 + 1; ++j) pred[pos(rng)] = lab(rng);
    }
    ok["edit"] += edit_score(pred, gt) == st::oracle_edit(pred, gt);
    bool f1 = true;
    for (double th : {0.10, 0.25, 0.50}) f1 = f1 && f1_overlap(pred, gt, th) == st::oracle_f1(pred, gt, th);
    ok["f1"] += f1;
    const auto fm = frame_metrics(pred, gt, static_cast<std::size_t>(c));
    const auto om = st::oracle_frame(pred, gt, static_cast<std::size_t>(c));
    ok["frame"] += fm.accuracy == om.accuracy && fm.precision == om.precision && fm.recall == om.recall &&
                   fm.jaccard == om.jaccard;
    std::vector<std::vector<int>> next(n, std::vector<int>(4));
    std::uniform_int_distribution<int> lab(0, c);
    bool hz = true;
    for (std::size_t k = 1; k <= 4; ++k) {
      const auto truth = st::oracle_next_labels(gt, k, c);
      for (std::size_t t = 0; t < n; ++t) next[t][k - 1] = t % 2 ? lab(rng) : truth[t];
      hz = hz && horizon_accuracy(next, gt, k, c) == st::oracle_horizon(next, gt, k, c);
    }
    ok["horizon"] += hz;
  }
  const std::vector<int> a{0, 1, 0, 1}, b{0, 0, 1, 1};
  std::vector<int> gt(100, 0), pred(100, 0);
  std::fill(pred.begin() + 60, pred.end(), 1);
  const bool worked = edit_score(a, b) == 50.0 && st::oracle_edit(a, b) == 50.0 &&
                      std::abs(f1_overlap(pred, gt, 0.5) - 66.7) <= 0.1 &&
                      std::abs(st::oracle_f1(pred, gt, 0.5) - 66.7) <= 0.1 && f1_overlap(pred, gt, 0.7) == 0.0;
  std::string detail;
  bool pass = worked;
  for (const auto& [k, v] : ok) {
    detail += k + " " + std::to_string(v) + "/500, ";
    pass = pass && v == 500;
  }
  detail += std::string("worked examples ") + (worked ? "ok" : "mismatch");
  return {pass, detail};
}

// Training helpers ------------------------------------------------------

fs::path ensure_dataset(const RunConfig& cfg, const fs::path& dir) {
  const fs::path manifest = dir / "manifest.json";
  if (!fs::exists(manifest)) generate_to_disk(cfg.generator, dir);
  return manifest;
}

struct TrainedRun {
  fs::path checkpoint;
  double seconds = 0.0;
  bool reused = false;
};

TrainedRun train_or_reuse(const RunConfig& cfg, const fs::path& manifest, const fs::path& run_dir, bool reuse) {
  // Training time is measured once and kept next to the run.
  const fs::path final_ckpt = run_dir / "final.ckpt", timing = run_dir / "train_seconds.txt";
  if (reuse && fs::exists(final_ckpt) && fs::exists(timing)) {
    const CheckpointMeta meta = checkpoint_meta(read_container(final_ckpt));
    const nlohmann::json extra{
        {"loss", to_json(cfg.loss)}, {"optimizer", to_json(cfg.optimizer)}, {"key_targets", cfg.key_targets}};
    if (meta.config == cfg.model && meta.seed == cfg.seed && meta.extra == extra &&
        meta.epoch == static_cast<std::int64_t>(cfg.optimizer.epochs)) {
      return {final_ckpt, std::stod(read_file(timing)), true};
    }
  }
  fs::remove_all(run_dir);
  TrainOptions opts;
  opts.manifest = manifest;
  opts.run_dir = run_dir;
  const TrainResult r = train(cfg, opts);
  write_file(timing, std::to_string(r.seconds) + "\n");
  return {r.final_checkpoint, r.seconds, false};
}

MetricReport evaluate_run(const fs::path& checkpoint, const std::vector<LoadedVideo>& test, const RunConfig& cfg) {
  Model model = load_model(checkpoint);
  EvalOptions eo;
  eo.thresholds = cfg.eval.thresholds;
  eo.aggregation = cfg.eval.mode();
  return evaluate_model(model, test, eo);
}

// Accuracy of always predicting the most frequent training label, per video.
std::pair<double, double> majority_baselines(const std::vector<LoadedVideo>& train_set,
                                             const std::vector<LoadedVideo>& test, int n_classes) {
  std::map<int, std::size_t> cur, next;
  for (const auto& v : train_set) {
    for (int l : v.annotation.frame_labels) ++cur[l];
    for (int l : next_segment_labels(v.annotation.frame_labels, 1, n_classes)) ++next[l];
  }
  auto argmax = [](const std::map<int, std::size_t>& m) {
    return std::max_element(m.begin(), m.end(), [](auto& a, auto& b) { return a.second < b.second; })->first;
  };
  const int mc = argmax(cur), mn = argmax(next);
  double acc = 0.0, pred = 0.0;
  for (const auto& v : test) {
    const auto& gt = v.annotation.frame_labels;
    const auto nx = next_segment_labels(gt, 1, n_classes);
    acc += 100.0 * static_cast<double>(std::count(gt.begin(), gt.end(), mc)) / static_cast<double>(gt.size());
    pred += 100.0 * static_cast<double>(std::count(nx.begin(), nx.end(), mn)) / static_cast<double>(gt.size());
  }
  return {acc / static_cast<double>(test.size()), pred / static_cast<double>(test.size())};
}

// 4 -----------------------------------------------------------------------

Outcome convergence(const RunConfig& cfg, const fs::path& work, bool reuse) {
  const fs::path manifest = ensure_dataset(cfg, work / "toy_data");
  const TrainedRun run = train_or_reuse(cfg, manifest, work / "toy_run", reuse);
  const auto train_set = load_videos(manifest, "train");
  const auto test = load_videos(manifest, cfg.eval.split);
  const auto t0 = Clock::now();
  const MetricReport r = evaluate_run(run.checkpoint, test, cfg);
  const double secs = run.seconds + seconds_since(t0);
  const auto [base_acc, base_pred] = majority_baselines(train_set, test, static_cast<int>(cfg.model.n_classes));
  const double acc = r.frame_accuracy, pred1 = r.horizon_acc.at("1");
  Outcome o;
  o.pass = acc >= 85.0 && pred1 >= 60.0 && acc >= base_acc + 20.0 && pred1 >= base_pred + 20.0 &&
           secs < 900.0;
  o.detail = "acc " + fmt("%.1f", acc) + " (majority " + fmt("%.1f", base_acc) + "), pred1 " + fmt("%.1f", pred1) +
             " (majority " + fmt("%.1f", base_pred) + "), " + std::to_string(train_set.size()) + " train / " +
             std::to_string(test.size()) + " test videos, " +
             fmt("%.0f s", secs) + " train+eval" + (run.reused ? " (training time recorded by the reused run)" : "");
  return o;
}

// 5 -----------------------------------------------------------------------

Outcome anticipation_trend(const RunConfig& cfg, const fs::path& work, bool reuse) {
  const fs::path manifest = ensure_dataset(cfg, work / "ablation_data");
  const auto test = load_videos(manifest, cfg.eval.split);
  std::map<std::size_t, std::vector<double>> rec;
  std::vector<double> p1, p4;
  for (std::size_t nq : cfg.ablation.n_queries) {
    for (std::uint64_t seed : cfg.ablation.seeds) {
      RunConfig rc = cfg;
      rc.model.n_queries = nq;
      rc.seed = seed;
      const fs::path dir = work / "ablation" / ("nq" + std::to_string(nq) + "_seed" + std::to_string(seed));
      const TrainedRun run = train_or_reuse(rc, manifest, dir, reuse);
      const MetricReport r = evaluate_run(run.checkpoint, test, rc);
      rec[nq].push_back(r.frame_accuracy);
      if (nq == 4) {
        p1.push_back(r.horizon_acc.at("1"));
        p4.push_back(r.horizon_acc.at("4"));
      }
      std::cerr << "  ablation nq=" << nq << " seed=" << seed << " acc " << fmt("%.1f", r.frame_accuracy)
                << (nq > 0 ? " pred1 " + fmt("%.1f", r.horizon_acc.at("1")) : std::string()) << "\n";
    }
  }
  if (p1.empty()) return {false, "ablation config has no n_queries = 4 runs"};
  double lo = 1e9, hi = -1e9;
  std::string recs;
  for (const auto& [nq, v] : rec) {
    const double m = median(v);
    lo = std::min(lo, m);
    hi = std::max(hi, m);
    recs += (recs.empty() ? "" : ", ") + std::to_string(nq) + ":" + fmt("%.1f", m);
  }
  const double m1 = median(p1), m4 = median(p4);
  return {m1 >= m4 + 5.0 && hi - lo <= 5.0, "median pred1 " + fmt("%.1f", m1) + " vs pred4 " + fmt("%.1f", m4) +
                                                 " over " + std::to_string(p1.size()) + " seeds; median acc by n_queries {" +
                                                 recs + "}, band " + fmt("%.1f", hi - lo)};
}

// 6 -----------------------------------------------------------------------

Outcome determinism(const RunConfig& base, const fs::path& work) {
  RunConfig cfg = base;
  cfg.optimizer.epochs = 2;
  const fs::path manifest = ensure_dataset(cfg, work / "toy_data");
  const fs::path root = work / "determinism";
  fs::remove_all(root);
  auto run = [&](const std::string& name, std::optional<std::size_t> max_epochs, std::optional<fs::path> resume) {
    TrainOptions o;
    o.manifest = manifest;
    o.run_dir = root / name;
    o.max_epochs = max_epochs;
    o.resume = resume;
    return train(cfg, o);
  };
  const TrainResult a = run("a", {}, {});
  const TrainResult b = run("b", {}, {});
  const bool identical = read_file(a.final_checkpoint) == read_file(b.final_checkpoint);

  CheckpointMeta meta;
  Model loaded = load_model(a.final_checkpoint, &meta);
  OptimizerState opt;
  load_optimizer(opt, loaded, read_container(a.final_checkpoint));
  save_checkpoint(root / "resaved.ckpt", loaded, meta, &opt);
  const bool round_trip = read_file(a.final_checkpoint) == read_file(root / "resaved.ckpt");

  run("r", 1, {});
  run("r", {}, epoch_checkpoint_path(root / "r", 1));
  auto records = [](const fs::path& log) {
    std::vector<nlohmann::json> out;
    std::istringstream in(read_file(log));
    std::string line;
    while (std::getline(in, line)) {
      auto j = nlohmann::json::parse(line);
      j.erase("wall_ms");
      out.push_back(j);
    }
    return out;
  };
  const auto full = records(root / "a" / "train.jsonl"), resumed = records(root / "r" / "train.jsonl");
  // The first record after the resume point and everything after it.
  std::size_t first_e2 = 0;
  while (first_e2 < full.size() && full[first_e2]["epoch"] != 2) ++first_e2;
  const bool resume_ok = first_e2 < full.size() && full == resumed &&
                         read_file(a.final_checkpoint) == read_file(root / "r" / "final.ckpt");
  return {identical && round_trip && resume_ok,
          std::string("identical seeded runs: ") + (identical ? "bit-identical" : "differ") +
              ", save/load/save: " + (round_trip ? "byte-identical" : "differs") + ", resume from epoch 1: " +
              (resume_ok ? "log and final checkpoint match" : "mismatch")};
}

// 7 -----------------------------------------------------------------------

Outcome loss_contract(const RunConfig& base) {
  Model model(base.model, 7);
  model.set_training(false);
  std::mt19937_64 rng(7);
  GeneratorConfig g = base.generator;
  g.n_videos = 1;
  const auto video = generate_dataset(g).front();
  const std::size_t t = std::min<std::size_t>(video.annotation.length() - 1, 150);
  TrainingSample s;

  auto grads_after = [&](const std::function<Tensor(const ForwardOutput&)>& loss) {
    model.parameters().zero_grad();
    s = sample_clip(model, video.annotation, video.features.features, t, true);
    const ForwardOutput out = model.forward(s.clip, s.carry);
    loss(out).backward();
    std::map<std::string, double> norm;
    for (const auto& p : model.parameters().items()) {
      double acc = 0.0;
      for (float x : p.tensor.grad()) acc += std::abs(x);
      norm[p.name] = acc;
    }
    return norm;
  };
  const auto rec = grads_after([&](const ForwardOutput& o) {
    return consistency_cross_entropy(o.recognition.frame_logits, s.labels, 0.15f, 4.0f);
  });
  bool future_zero = true;
  std::size_t future_params = 0;
  for (const auto& [name, n] : rec) {
    if (!is_future_parameter(name)) continue;
    ++future_params;
    future_zero = future_zero && n == 0.0;
  }
  const std::vector<std::string> shared{"input.weight", "encoder.layer0.attn.q.weight", "keys.proj.weight"};
  std::vector<std::pair<std::string, std::function<Tensor(const ForwardOutput&)>>> terms{
      {"next_phase", [&](const ForwardOutput& o) { return cross_entropy(o.segments->next_phase_logits, s.targets.next_labels); }},
      {"next_duration",
       [&](const ForwardOutput& o) {
         return mse(o.segments->durations,
                    Tensor::from_values({s.targets.next_durations_norm.size()}, s.targets.next_durations_norm));
       }},
      {"next_keys", [&](const ForwardOutput& o) { return mse(o.segments->key_segments, s.targets.next_key_targets); }}};
  bool shared_nonzero = true;
  std::string which;
  for (const auto& [term, fn] : terms) {
    const auto g2 = grads_after(fn);
    for (const auto& name : shared) {
      if (!(g2.at(name) > 0.0)) {
        shared_nonzero = false;
        which += " " + term + "->" + name;
      }
    }
  }
  return {future_zero && shared_nonzero && future_params > 0,
          "recognition grads on " + std::to_string(future_params) + " future-branch tensors " +
              (future_zero ? "all zero" : "NONZERO") + "; anticipation grads on shared encoder " +
              (shared_nonzero ? "nonzero for every term" : "zero for" + which)};
}

RunConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("missing config " + path.string());
  return load_run_config(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-7"};
  std::string work = "acceptance_work", criteria = "1,2,3,4,5,6,7";
  std::string configs = SUPRA_CONFIG_DIR;
  bool reuse = false;
  app.add_option("--work-dir", work, "Scratch directory for datasets and runs");
  app.add_option("--criteria", criteria, "Comma-separated subset to run");
  app.add_option("--config-dir", configs, "Directory holding toy.json and ablation.json");
  app.add_flag("--reuse", reuse, "Reuse finished training runs in the work directory");
  CLI11_PARSE(app, argc, argv);

  std::set<int> wanted;
  std::stringstream ss(criteria);
  for (std::string item; std::getline(ss, item, ',');) wanted.insert(std::stoi(item));
  fs::create_directories(work);

  bool all = true;
  auto report = [&](int n, const std::string& title, const std::function<Outcome()>& fn) {
    if (!wanted.count(n)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << "criterion " << n << " (" << title << "): " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail
              << std::endl;
  };
  report(1, "gradient suite", gradient_suite);
  report(2, "pooling equivalence", pooling_equivalence);
  report(3, "metric oracles", metric_oracles);
  report(4, "synthetic convergence", [&] { return convergence(load_config(fs::path(configs) / "toy.json"), work, reuse); });
  report(5, "anticipation trend",
         [&] { return anticipation_trend(load_config(fs::path(configs) / "ablation.json"), work, reuse); });
  report(6, "determinism and persistence", [&] { return determinism(load_config(fs::path(configs) / "toy.json"), work); });
  report(7, "loss contract", [&] { return loss_contract(load_config(fs::path(configs) / "toy.json")); });
  return all ? 0 : 1;
}
