#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "supra/ops.hpp"
#include "supra/optim.hpp"

using namespace supra;

namespace {

Tensor T(Shape s, std::vector<float> v, bool grad = false) { return Tensor::from_values(std::move(s), std::move(v), grad); }

std::vector<float> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST(Matmul, IdentityAndDot) {
  EXPECT_EQ(vals(matmul(T({2, 2}, {1, 0, 0, 1}), T({2, 2}, {3, 4, 5, 6}))), (std::vector<float>{3, 4, 5, 6}));
  EXPECT_EQ(vals(matmul(T({1, 2}, {1, 2}), T({2, 1}, {3, 4}))), (std::vector<float>{11}));
}

TEST(Matmul, GradientOfSumIsOnesTimesBTransposed) {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> d;
  std::vector<float> av(20), bv(15);
  for (auto& x : av) x = d(rng);
  for (auto& x : bv) x = d(rng);
  Tensor a = T({4, 5}, av, true), b = T({5, 3}, bv);
  sum(matmul(a, b)).backward();
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t k = 0; k < 5; ++k) {
      const float expect = bv[k * 3] + bv[k * 3 + 1] + bv[k * 3 + 2];
      EXPECT_NEAR(a.grad()[i * 5 + k], expect, 1e-5);
    }
  }
}

TEST(Matmul, ShapeMismatchThrows) { EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError); }

TEST(Softmax, UniformAndStable) {
  const Tensor u = softmax(T({3}, {0, 0, 0}), -1);
  for (float p : u.values()) EXPECT_FLOAT_EQ(p, 1.0f / 3.0f);
  const Tensor s = softmax(T({2}, {1000, 0}), -1);
  EXPECT_FLOAT_EQ(s.at(0), 1.0f);
  EXPECT_FLOAT_EQ(s.at(1), 0.0f);
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> d(0.0f, 4.0f);
  std::vector<float> v(6 * 9);
  for (auto& x : v) x = d(rng);
  const Tensor s = softmax(T({6, 9}, v), -1);
  for (std::size_t r = 0; r < 6; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 9; ++c) total += s.at(r, c);
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(LayerNorm, ConstantRowMapsToBias) {
  const Tensor y = layer_norm(T({1, 4}, {2, 2, 2, 2}), Tensor::full({4}, 1.0f), T({4}, {0.5f, 0, 0, -1}), 1e-5f);
  EXPECT_EQ(vals(y), (std::vector<float>{0.5f, 0, 0, -1}));
  const Tensor z = layer_norm(T({1, 3}, {7, 7, 7}), Tensor::full({3}, 1.0f), Tensor::zeros({3}), 1e-5f);
  EXPECT_EQ(vals(z), (std::vector<float>{0, 0, 0}));
}

TEST(LayerNorm, TwoValues) {
  const Tensor y = layer_norm(T({1, 2}, {1, 3}), Tensor::full({2}, 1.0f), Tensor::zeros({2}), 1e-5f);
  EXPECT_NEAR(y.at(0), -1.0f, 1e-4);
  EXPECT_NEAR(y.at(1), 1.0f, 1e-4);
}

TEST(CumulativeMax, Definition) {
  const auto r = cumulative_max_time(T({3, 2}, {1, 0, 0, 2, -1, 1}));
  EXPECT_EQ(vals(r.values), (std::vector<float>{1, 0, 1, 2, 1, 2}));
  EXPECT_EQ(r.argmax, (std::vector<std::int64_t>{0, 0, 0, 1, 0, 1}));
}

TEST(CumulativeMax, InitialStateWins) {
  const std::vector<float> init{5, -5};
  const auto r = cumulative_max_time(T({2, 2}, {1, 0, 0, 2}), init);
  EXPECT_EQ(vals(r.values), (std::vector<float>{5, 0, 5, 2}));
  EXPECT_EQ(r.argmax, (std::vector<std::int64_t>{-1, 0, -1, 1}));
}

TEST(CumulativeMax, TiesSendGradientToEarliest) {
  Tensor x = T({3, 1}, {2, 2, 1}, true);
  sum(cumulative_max_time(x).values).backward();
  EXPECT_EQ(std::vector<float>(x.grad().begin(), x.grad().end()), (std::vector<float>{3, 0, 0}));
}

TEST(CumulativeMax, MonotoneAndLastRowIsColumnMax) {
  std::mt19937_64 rng(11);
  std::normal_distribution<float> d;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> v(50 * 8);
    for (auto& x : v) x = d(rng);
    const Tensor y = cumulative_max_time(T({50, 8}, v)).values;
    for (std::size_t c = 0; c < 8; ++c) {
      float col_max = -INFINITY;
      for (std::size_t t = 0; t < 50; ++t) {
        col_max = std::max(col_max, v[t * 8 + c]);
        if (t > 0) {
          EXPECT_LE(y.at(t - 1, c), y.at(t, c));
        }
      }
      EXPECT_EQ(y.at(49, c), col_max);
    }
  }
}

TEST(CrossEntropy, Limits) {
  const std::vector<int> t0{0};
  EXPECT_NEAR(cross_entropy(T({1, 2}, {10, -10}), t0).item(), 0.0f, 1e-6);
  const std::vector<int> t3{3};
  EXPECT_NEAR(cross_entropy(Tensor::zeros({1, 7}), t3).item(), std::log(7.0f), 1e-6);
  EXPECT_NEAR(std::log(7.0), 1.9459, 1e-4);
}

TEST(CrossEntropy, IgnoredAndWeighted) {
  const std::vector<int> all_ignored{kIgnoreIndex, kIgnoreIndex};
  EXPECT_EQ(cross_entropy(Tensor::zeros({2, 3}), all_ignored).item(), 0.0f);
  // Weighted mean: (w0 * ln3 + w1 * ln3) / (w0 + w1) = ln3 for uniform logits.
  const std::vector<int> t{0, 1};
  const std::vector<float> w{2, 5, 1};
  EXPECT_NEAR(cross_entropy(Tensor::zeros({2, 3}), t, w).item(), std::log(3.0f), 1e-6);
  const std::vector<int> bad{3};
  EXPECT_THROW(cross_entropy(Tensor::zeros({1, 3}), bad), std::out_of_range);
}

TEST(Mse, Values) {
  EXPECT_EQ(mse(T({2}, {1, 2}), T({2}, {1, 2})).item(), 0.0f);
  EXPECT_EQ(mse(T({2}, {0, 0}), T({2}, {1, 3})).item(), 5.0f);
  Tensor p = T({2}, {0, 0}, true);
  mse(p, T({2}, {1, 3})).backward();
  EXPECT_FLOAT_EQ(p.grad()[0], -1.0f);
  EXPECT_FLOAT_EQ(p.grad()[1], -3.0f);
}

TEST(Dropout, SeededAndInverted) {
  const Tensor x = Tensor::full({1000}, 1.0f);
  std::mt19937_64 a(7), b(7);
  const Tensor ya = dropout(x, 0.25f, true, a), yb = dropout(x, 0.25f, true, b);
  EXPECT_EQ(vals(ya), vals(yb));
  std::size_t kept = 0;
  for (float v : ya.values()) {
    EXPECT_TRUE(v == 0.0f || std::abs(v - 1.0f / 0.75f) < 1e-6);
    kept += v != 0.0f;
  }
  EXPECT_GT(kept, 650u);
  EXPECT_LT(kept, 850u);
  std::mt19937_64 c(7);
  EXPECT_EQ(vals(dropout(x, 0.25f, false, c)), vals(x));
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  Tensor a = T({2}, {1, 2}, true);
  NoGradGuard ng;
  EXPECT_FALSE(mul(a, a).requires_grad());
}

TEST(Autograd, SharedInputAccumulates) {
  Tensor a = T({1}, {3}, true);
  sum(add(mul(a, a), a)).backward();
  EXPECT_FLOAT_EQ(a.grad()[0], 7.0f);
}

TEST(Autograd, ForwardIsDeterministic) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> d;
  std::vector<float> v(8 * 16), w(16 * 16);
  for (auto& x : v) x = d(rng);
  for (auto& x : w) x = d(rng);
  auto run = [&] { return vals(layer_norm(gelu(matmul(T({8, 16}, v), T({16, 16}, w))), Tensor::full({16}, 1.0f),
                                          Tensor::zeros({16}), 1e-5f)); };
  EXPECT_EQ(run(), run());
}

TEST(Autograd, NonFiniteForwardThrows) {
  EXPECT_THROW(mul_scalar(T({1}, {3e38f}), 10.0f), NumericError);
}

// Every differentiable op against central differences on 10 random points.
class GradSuite : public ::testing::TestWithParam<supra::testing::GradCase> {};

TEST_P(GradSuite, MatchesFiniteDifferences) {
  const auto report = supra::testing::run_gradcheck(GetParam(), 10, 2024);
  EXPECT_EQ(report.instances, 10);
  EXPECT_EQ(report.failures, 0) << report.first_failure;
}

INSTANTIATE_TEST_SUITE_P(Ops, GradSuite, ::testing::ValuesIn(supra::testing::all_grad_cases()),
                         [](const auto& info) { return info.param.name; });

TEST(Sgd, ZeroGradientLeavesParametersUnchanged) {
  ParameterList params;
  params.add("w", T({3}, {1, -2, 3}, true));
  OptimizerState st;
  st.weight_decay = 0.0;
  st.schedule = {0.1, 0.0, 10.0};
  params.zero_grad();
  sgd_step(params, st, 0.0);
  EXPECT_EQ(vals(params.get("w")), (std::vector<float>{1, -2, 3}));
}

TEST(Sgd, MomentumRecurrenceClosedForm) {
  // Constant gradient g and rate lr: buf_n = g (1 - mu^n) / (1 - mu),
  // x_n = x_0 - lr g sum_{i=1..n} (1 - mu^i) / (1 - mu).
  ParameterList params;
  params.add("x", T({1}, {1.0f}, true));
  OptimizerState st;
  st.momentum = 0.9;
  st.weight_decay = 0.0;
  st.schedule = {0.01, 0.0, 0.0};
  const double g = 0.5;
  for (int n = 1; n <= 25; ++n) {
    params.get("x").zero_grad();
    params.get("x").grad_mut()[0] = static_cast<float>(g);
    sgd_step(params, st, 0.0);
    double expect = 1.0;
    for (int i = 1; i <= n; ++i) expect -= 0.01 * g * (1 - std::pow(0.9, i)) / 0.1;
    EXPECT_NEAR(params.get("x").at(0), expect, 1e-5) << "step " << n;
  }
  EXPECT_EQ(st.step, 25);
}

TEST(Sgd, MissingGradientThrowsAndClipScales) {
  ParameterList params;
  params.add("a", T({2}, {0, 0}, true));
  OptimizerState st;
  EXPECT_THROW(sgd_step(params, st, 0.0), std::logic_error);
  st.grad_clip = 1.0;
  st.weight_decay = 0.0;
  st.momentum = 0.0;
  st.schedule = {1.0, 0.0, 0.0};
  params.zero_grad();
  params.get("a").grad_mut()[0] = 3.0f;
  params.get("a").grad_mut()[1] = 4.0f;
  sgd_step(params, st, 0.0);
  EXPECT_NEAR(params.get("a").at(0), -0.6f, 1e-6);
  EXPECT_NEAR(params.get("a").at(1), -0.8f, 1e-6);
  EXPECT_FALSE(params.get("a").has_grad());
}

TEST(LrSchedule, Endpoints) {
  const LrSchedule s{3e-4, 5.0, 40.0};
  EXPECT_EQ(s.at(0.0), 0.0);
  EXPECT_NEAR(s.at(0.01), 3e-4 * 0.01 / 5.0, 1e-15);
  EXPECT_DOUBLE_EQ(s.at(5.0), 3e-4);
  EXPECT_NEAR(s.at(22.5), 1.5e-4, 1e-12);
  EXPECT_NEAR(s.at(40.0), 0.0, 1e-15);
  for (double e = 5.0; e < 40.0; e += 0.5) EXPECT_GE(s.at(e), s.at(e + 0.5));
}
