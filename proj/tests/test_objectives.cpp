#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "supra/dataio.hpp"
#include "supra/objectives.hpp"
#include "supra/ops.hpp"

using namespace supra;

namespace {

constexpr int A = 0, B = 1, Cc = 2;

ModelConfig small_config(std::size_t n_queries = 2) {
  ModelConfig c;
  c.clip_length = 12;
  c.window_length = 4;
  c.d_feat = 5;
  c.d_model = 8;
  c.d_key = 4;
  c.d_ff = 16;
  c.n_classes = 3;
  c.n_queries = n_queries;
  c.n_heads = 2;
  return c;
}

Tensor random_tensor(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n;
  std::vector<float> v(shape_numel(s));
  for (auto& x : v) x = n(rng);
  return Tensor::from_values(std::move(s), std::move(v));
}

std::vector<float> grads(Model& m) {
  std::vector<float> g;
  for (const auto& p : m.parameters().items()) {
    if (p.tensor.has_grad()) {
      g.insert(g.end(), p.tensor.grad().begin(), p.tensor.grad().end());
    } else {
      g.insert(g.end(), p.tensor.numel(), 0.0f);
    }
  }
  return g;
}

}  // namespace

TEST(Consistency, ConstantLogitsHaveNoSmoothingTerm) {
  const Tensor logits = Tensor::from_values({3, 3}, {1, 2, 3, 1, 2, 3, 1, 2, 3});
  const std::vector<int> labels{0, 1, 2};
  EXPECT_EQ(consistency_cross_entropy(logits, labels, 0.15f, 4.0f).item(), cross_entropy(logits, labels).item());
}

TEST(Consistency, LambdaZeroIsCrossEntropy) {
  const Tensor logits = random_tensor({5, 3}, 1);
  const std::vector<int> labels{0, 2, 2, 1, 0};
  EXPECT_EQ(consistency_cross_entropy(logits, labels, 0.0f, 4.0f).item(), cross_entropy(logits, labels).item());
}

TEST(Consistency, TwoFrameHandValue) {
  // Both rows share the normaliser L = ln(1 + e); the log-probability
  // differences are +1 and -1, so the smoothing mean is 1 and CE is L.
  const Tensor logits = Tensor::from_values({2, 2}, {0, 1, 1, 0});
  const std::vector<int> labels{0, 1};
  const double L = std::log(1.0 + std::exp(1.0));
  EXPECT_NEAR(consistency_cross_entropy(logits, labels, 0.15f, 4.0f).item(), L + 0.15, 1e-6);
  EXPECT_NEAR(consistency_cross_entropy(logits, labels, 0.15f, 4.0f).item(), 1.4632617, 1e-6);
  // With tau = 0.5 the squared differences clamp at 0.25.
  EXPECT_NEAR(consistency_cross_entropy(logits, labels, 0.15f, 0.5f).item(), L + 0.15 * 0.25, 1e-6);
}

TEST(Consistency, PaddedFramesAreLeftOut) {
  const Tensor logits = random_tensor({4, 3}, 2);
  const std::vector<int> padded{kIgnoreIndex, kIgnoreIndex, 1, 2};
  const std::vector<int> tail{1, 2};
  EXPECT_NEAR(consistency_cross_entropy(logits, padded, 0.15f, 4.0f).item(),
              consistency_cross_entropy(slice(logits, 0, 2, 2), tail, 0.15f, 4.0f).item(), 1e-7);
}

TEST(Targets, WorkedExamples) {
  ModelConfig c = small_config(1);
  const std::vector<int> aabb{A, A, B, B};
  auto t = build_anticipation_targets(aabb, 0, 1, c);
  EXPECT_EQ(t.next_labels, (std::vector<int>{B}));
  EXPECT_FLOAT_EQ(t.next_durations_norm[0], normalize_duration(2.0f, 1800.0f));
  EXPECT_EQ(t.segment_last, (std::vector<std::int64_t>{3}));
  t = build_anticipation_targets(aabb, 2, 2, c);
  EXPECT_EQ(t.next_labels, (std::vector<int>{3, 3}));
  EXPECT_EQ(t.next_durations_norm, (std::vector<float>{0, 0}));
  const std::vector<int> abc{A, B, Cc};
  EXPECT_EQ(build_anticipation_targets(abc, 0, 4, c).next_labels, (std::vector<int>{B, Cc, 3, 3}));
  EXPECT_THROW(build_anticipation_targets(abc, 3, 1, c), std::out_of_range);
}

TEST(Targets, PureAndPrefixStable) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> lab(0, 2);
  ModelConfig c = small_config();
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> labels(40);
    for (auto& x : labels) x = lab(rng);
    const std::size_t t = static_cast<std::size_t>(trial) % 40;
    const auto a = build_anticipation_targets(labels, t, 4, c);
    const auto b = build_anticipation_targets(labels, t, 4, c);
    EXPECT_EQ(a.next_labels, b.next_labels);
    EXPECT_EQ(a.next_durations_norm, b.next_durations_norm);
    for (std::size_t n = 1; n < 4; ++n) {
      const auto p = build_anticipation_targets(labels, t, n, c);
      EXPECT_TRUE(std::equal(p.next_labels.begin(), p.next_labels.end(), a.next_labels.begin()));
      EXPECT_TRUE(std::equal(p.next_durations_norm.begin(), p.next_durations_norm.end(), a.next_durations_norm.begin()));
    }
  }
}

TEST(Targets, KeyTargetsAreHistoryRowsAtSegmentEnds) {
  Model m(small_config(3), 4);
  const std::vector<int> labels{A, A, A, B, B, B, B, B, Cc, Cc, A, A, A, A, A, A};
  const Tensor f = random_tensor({labels.size(), 5}, 5);
  const TrainingSample s = sample_clip(m, VideoAnnotation::from_labels("v", labels), f, 4, true);
  EXPECT_EQ(s.targets.next_labels, (std::vector<int>{Cc, A, 3}));
  EXPECT_EQ(s.targets.segment_last, (std::vector<std::int64_t>{9, 15, -1}));
  const Tensor h = key_history(m, f, 4, 15);
  for (std::size_t d = 0; d < 4; ++d) {
    EXPECT_EQ(s.targets.next_key_targets.at(0, d), h.at(9, d));
    EXPECT_EQ(s.targets.next_key_targets.at(1, d), h.at(15, d));
    EXPECT_EQ(s.targets.next_key_targets.at(2, d), 0.0f);
  }
  // The same sample without key targets leaves the tensor undefined.
  EXPECT_FALSE(sample_clip(m, VideoAnnotation::from_labels("v", labels), f, 4, false).targets.next_key_targets.defined());
}

TEST(Targets, SampleClipMatchesBuilder) {
  Model m(small_config(2), 6);
  const std::vector<int> labels{A, A, B, B, B, Cc, Cc, Cc, Cc, A};
  const Tensor f = random_tensor({labels.size(), 5}, 6);
  for (std::size_t t = 0; t < labels.size(); ++t) {
    const TrainingSample s = sample_clip(m, VideoAnnotation::from_labels("v", labels), f, t, false);
    const auto ref = build_anticipation_targets(labels, t, 2, m.config());
    EXPECT_EQ(s.targets.next_labels, ref.next_labels);
    EXPECT_EQ(s.targets.next_durations_norm, ref.next_durations_norm);
  }
}

TEST(KeyHistory, RestoresTrainingFlagAndChecksRange) {
  Model m(small_config(), 7);
  m.set_training(true);
  const Tensor f = random_tensor({10, 5}, 7);
  const Tensor h = key_history(m, f, 9, 9);
  EXPECT_TRUE(m.training());
  EXPECT_FALSE(h.requires_grad());
  EXPECT_EQ(h.shape(), (Shape{10, 4}));
  EXPECT_THROW(key_history(m, f, 9, 10), std::out_of_range);
}

TEST(TotalLoss, RecognitionOnly) {
  Model m(small_config(0), 8);
  const std::vector<int> labels{0, 1, 1, 2};
  const ForwardOutput out = m.forward(m.embed(random_tensor({6, 5}, 8)));
  LossWeights w;
  w.current = 2.0;
  const LossBreakdown l = total_loss(out.recognition, nullptr, labels, nullptr, w);
  EXPECT_EQ(l.terms.size(), 1u);
  EXPECT_NEAR(l.total.item(), 2.0 * consistency_cross_entropy(out.recognition.frame_logits, labels, 0.15f, 4.0f).item(),
              1e-6);
}

TEST(TotalLoss, SumOfIndependentTerms) {
  Model m(small_config(3), 9);
  const std::vector<int> labels{A, A, A, B, B, B, B, B, Cc, Cc, A, A, A, A, A, A};
  const Tensor f = random_tensor({labels.size(), 5}, 9);
  const TrainingSample s = sample_clip(m, VideoAnnotation::from_labels("v", labels), f, 5, true);
  const ForwardOutput out = m.forward(s.clip, s.carry);
  LossWeights w{0.5, 2.0, 3.0, 0.25, 0.15, 4.0};
  const LossBreakdown l = total_loss(out.recognition, &*out.segments, s.labels, &s.targets, w);

  const double current = consistency_cross_entropy(out.recognition.frame_logits, s.labels, 0.15f, 4.0f).item();
  const double phase = cross_entropy(out.segments->next_phase_logits, s.targets.next_labels).item();
  double dur = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double e = out.segments->durations.at(i) - s.targets.next_durations_norm[i];
    dur += e * e / 3.0;
  }
  double keys = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    if (s.targets.segment_last[i] < 0) continue;
    for (std::size_t d = 0; d < 4; ++d) {
      const double e = out.segments->key_segments.at(i, d) - s.targets.next_key_targets.at(i, d);
      keys += e * e;
      ++n;
    }
  }
  keys /= static_cast<double>(n);
  EXPECT_NEAR(l.terms.at("current"), current, 1e-6);
  EXPECT_NEAR(l.terms.at("next_phase"), phase, 1e-6);
  EXPECT_NEAR(l.terms.at("next_duration"), dur, 1e-6);
  EXPECT_NEAR(l.terms.at("next_keys"), keys, 1e-5);
  EXPECT_NEAR(l.total.item(), 0.5 * current + 2.0 * phase + 3.0 * dur + 0.25 * keys, 1e-4);
  EXPECT_GE(l.total.item(), 0.0f);
}

TEST(TotalLoss, ZeroWeightsGiveZeroLossAndGradients) {
  Model m(small_config(2), 10);
  const std::vector<int> labels{A, B, B, Cc, Cc, Cc, A, A};
  const Tensor f = random_tensor({labels.size(), 5}, 10);
  const TrainingSample s = sample_clip(m, VideoAnnotation::from_labels("v", labels), f, 3, true);
  const ForwardOutput out = m.forward(s.clip, s.carry);
  const LossWeights w{0, 0, 0, 0, 0.15, 4.0};
  const LossBreakdown l = total_loss(out.recognition, &*out.segments, s.labels, &s.targets, w);
  EXPECT_EQ(l.total.item(), 0.0f);
  l.total.backward();
  for (float g : grads(m)) ASSERT_EQ(g, 0.0f);
}

TEST(TotalLoss, GradientIsWeightedSumOfTermGradients) {
  const std::vector<int> labels{A, A, B, B, B, Cc, Cc, A, A, A, B, B};
  const Tensor f = random_tensor({labels.size(), 5}, 11);
  const LossWeights w{1.5, 0.5, 2.0, 0.75, 0.15, 4.0};
  auto run = [&](const LossWeights& weights) {
    Model m(small_config(2), 12);
    const TrainingSample s = sample_clip(m, VideoAnnotation::from_labels("v", labels), f, 6, true);
    const ForwardOutput out = m.forward(s.clip, s.carry);
    total_loss(out.recognition, &*out.segments, s.labels, &s.targets, weights).total.backward();
    return grads(m);
  };
  const auto full = run(w);
  std::vector<double> combined(full.size(), 0.0);
  const double ws[] = {w.current, w.next_phase, w.next_duration, w.next_keys};
  for (int term = 0; term < 4; ++term) {
    LossWeights one{0, 0, 0, 0, 0.15, 4.0};
    double* fields[] = {&one.current, &one.next_phase, &one.next_duration, &one.next_keys};
    *fields[term] = 1.0;
    const auto g = run(one);
    for (std::size_t i = 0; i < g.size(); ++i) combined[i] += ws[term] * g[i];
  }
  for (std::size_t i = 0; i < full.size(); ++i) {
    ASSERT_NEAR(full[i], combined[i], 1e-4 + 1e-3 * std::abs(combined[i])) << i;
  }
}

TEST(LossWeights, Validation) {
  LossWeights w;
  EXPECT_NO_THROW(w.validate());
  w.next_phase = -1;
  EXPECT_THROW(w.validate(), std::invalid_argument);
  w = {};
  w.smoothing_clamp = 0;
  EXPECT_THROW(w.validate(), std::invalid_argument);
}
