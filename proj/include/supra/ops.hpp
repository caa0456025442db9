#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "supra/tensor.hpp"

namespace supra {

/// Marks a target that contributes nothing to a loss.
inline constexpr int kIgnoreIndex = -1;

// Elementwise. `b` must match `a` exactly or match a trailing suffix of a's
// shape (bias / positional broadcasting); its gradient is summed over the
// leading axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, float s);
Tensor mul_scalar(const Tensor& a, float s);
Tensor square(const Tensor& a);
Tensor relu(const Tensor& a);
/// Exact GELU, x * Phi(x).
Tensor gelu(const Tensor& a);
/// min(a, hi); gradient is zero where the clamp is active.
Tensor clamp_max(const Tensor& a, float hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, float s) { return mul_scalar(a, s); }

// Reductions to a scalar.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Layout.
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a, int axis0, int axis1);
Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t length);
Tensor concat(std::span<const Tensor> parts, int axis);
/// Rows of `table` [V, D] selected by `indices` -> [indices.size(), D].
Tensor embedding(const Tensor& table, std::span<const std::size_t> indices);

/// [.., M, K] x [K, N] or [.., M, K] x [.., K, N] with identical batch axes.
Tensor matmul(const Tensor& a, const Tensor& b);
/// x [.., in] · weight [in, out] + bias [out]. `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);

/// Normalizes the last axis. Rows whose variance is below `eps` map to `bias`.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps);

struct CumMaxResult {
  Tensor values;
  /// Time index that attains each output, -1 when the initial state wins.
  std::vector<std::int64_t> argmax;
};

/// Running maximum down the time axis of x [T, D]. `initial` ([D], optional)
/// seeds the running state and receives no gradient. Ties go to the earliest
/// index, which also receives the gradient.
CumMaxResult cumulative_max_time(const Tensor& x, std::span<const float> initial = {});

/// Mean negative log-likelihood of `targets` under softmax(logits) [B, C].
/// Targets equal to kIgnoreIndex are skipped; with `class_weights` the mean is
/// weighted by the target class weight. All-ignored batches yield 0.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, std::span<const float> class_weights = {});

/// Mean squared difference; `target` carries no gradient.
Tensor mse(const Tensor& pred, const Tensor& target);

/// Inverted dropout. Identity when `training` is false or p == 0.
Tensor dropout(const Tensor& x, float p, bool training, std::mt19937_64& rng);

}  // namespace supra
