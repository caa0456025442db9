#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace supra {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised for any shape or dimension disagreement between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a forward op produces NaN or Inf from finite inputs.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
struct TensorImpl;
struct GradNode;
}  // namespace detail

/// Dense row-major float32 tensor with reverse-mode differentiation.
///
/// A Tensor is a shared handle: copies alias the same storage. Values are
/// immutable once produced by an op; only leaf tensors (parameters, inputs)
/// may be written through values_mut(). Ops record their backward closure on
/// the result when any input requires a gradient and grad mode is enabled.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  /// Size of an axis; negative axes count from the end.
  std::size_t dim(int axis) const;
  std::size_t numel() const;

  std::span<const float> values() const;
  std::span<float> values_mut();
  float item() const;
  float at(std::size_t i) const;
  float at(std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const float> grad() const;
  std::span<float> grad_mut();
  /// Sets the gradient to zeros, allocating it if absent.
  void zero_grad();
  void clear_grad();

  /// Backpropagates from this scalar. The recorded graph is released afterwards.
  void backward() const;

  /// Same values, no history, requires_grad = false. Storage is copied.
  Tensor detach() const;

  // Internal access for op implementations.
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

bool grad_enabled();

/// Disables graph recording for the lifetime of the guard (per thread).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace supra
