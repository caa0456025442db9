#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "supra/config.hpp"
#include "supra/errors.hpp"

using namespace supra;
using nlohmann::json;

TEST(RunConfig, DefaultsMatchTrainingProtocol) {
  const RunConfig c;
  EXPECT_EQ(c.optimizer.lr, 3e-4);
  EXPECT_EQ(c.optimizer.momentum, 0.9);
  EXPECT_EQ(c.optimizer.weight_decay, 1e-5);
  EXPECT_EQ(c.optimizer.warmup_epochs, 5.0);
  EXPECT_EQ(c.optimizer.epochs, 40u);
  EXPECT_EQ(c.optimizer.batch_size, 8u);
  EXPECT_EQ(c.eval.thresholds, (std::vector<double>{0.10, 0.25, 0.50}));
  EXPECT_EQ(c.model.n_classes, 7u);
  EXPECT_EQ(c.model.clip_length, 120u);
  EXPECT_EQ(c.model.window_length, 20u);
  EXPECT_EQ(c.loss.smoothing_weight, 0.15);
  EXPECT_EQ(c.loss.smoothing_clamp, 4.0);
  EXPECT_NO_THROW(c.validate());
}

TEST(RunConfig, JsonRoundTrip) {
  RunConfig c;
  c.model.n_queries = 2;
  c.optimizer.lr = 0.02;
  c.generator.duration_log_mean = {3, 3, 3, 3, 3, 3, 3};
  c.eval.aggregation = "pooled";
  c.ablation.seeds = {7, 8};
  c.key_targets = false;
  c.seed = 12345678901234ull;
  const RunConfig back = run_config_from_json(json::parse(to_json(c).dump()));
  EXPECT_EQ(back, c);
  EXPECT_EQ(back.eval.mode(), Aggregation::Pooled);
}

TEST(RunConfig, PartialDocumentKeepsDefaults) {
  const RunConfig c = run_config_from_json(json::parse(R"({"optimizer": {"lr": 0.01}, "model": {"n_queries": 1}})"));
  EXPECT_EQ(c.optimizer.lr, 0.01);
  EXPECT_EQ(c.optimizer.epochs, 40u);
  EXPECT_EQ(c.model.n_queries, 1u);
  EXPECT_EQ(c.model.d_model, 64u);
}

TEST(RunConfig, RejectsUnknownKeysAndWrongTypes) {
  for (const char* doc : {R"({"optimiser": {}})", R"({"model": {"d_modle": 3}})", R"({"model": {"d_model": "64"}})",
                          R"({"model": {"d_model": -1}})", R"({"model": {"d_model": 1.5}})", R"({"seed": true})",
                          R"({"eval": {"thresholds": [0.5, 1.5]}})", R"({"eval": {"aggregation": "mean"}})",
                          R"({"model": {"clip_length": 50}})", R"({"generator": {"n_classes": 5}})", R"([1, 2])",
                          R"({"loss": {"next_phase": -1}})"}) {
    EXPECT_THROW(run_config_from_json(json::parse(doc)), ConfigError) << doc;
  }
}

TEST(RunConfig, LoadErrorsAreConfigErrors) {
  const auto dir = std::filesystem::path(::testing::TempDir()) / "supra_config";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "bad.json") << "{\"seed\": ";
  EXPECT_THROW(load_run_config(dir / "bad.json"), ConfigError);
  EXPECT_THROW(load_run_config(dir / "absent.json"), ConfigError);
  std::ofstream(dir / "ok.json") << R"({"seed": 3})";
  EXPECT_EQ(load_run_config(dir / "ok.json").seed, 3u);
}
