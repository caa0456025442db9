#include "supra/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "tensor_impl.hpp"

namespace supra {

namespace {
thread_local bool g_grad_enabled = true;

detail::TensorImpl& checked(const std::shared_ptr<detail::TensorImpl>& impl) {
  if (!impl) throw std::logic_error("use of undefined tensor");
  return *impl;
}
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from_values(std::move(shape), std::vector<float>(n, value), requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<float> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value) { return from_values({}, {value}); }

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::size_t Tensor::dim(int axis) const {
  const auto& s = shape();
  const int r = static_cast<int>(s.size());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  return s[static_cast<std::size_t>(a)];
}

std::size_t Tensor::numel() const { return checked(impl_).data.size(); }

std::span<const float> Tensor::values() const { return checked(impl_).data; }

std::span<float> Tensor::values_mut() {
  auto& impl = checked(impl_);
  if (impl.node) throw std::logic_error("values_mut() on a non-leaf tensor");
  return impl.data;
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

float Tensor::at(std::size_t i) const { return values()[i]; }

float Tensor::at(std::size_t i, std::size_t j) const {
  if (rank() != 2) throw ShapeError("at(i, j) on tensor of shape " + shape_str(shape()));
  return values()[i * shape()[1] + j];
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  auto& impl = checked(impl_);
  if (impl.node) throw std::logic_error("set_requires_grad() on a non-leaf tensor");
  impl.requires_grad = flag;
}

bool Tensor::is_leaf() const { return checked(impl_).node == nullptr; }

bool Tensor::has_grad() const { return !checked(impl_).grad.empty(); }

std::span<const float> Tensor::grad() const { return checked(impl_).grad; }

std::span<float> Tensor::grad_mut() { return detail::grad_of(impl_); }

void Tensor::zero_grad() {
  auto& impl = checked(impl_);
  impl.grad.assign(impl.data.size(), 0.0f);
}

void Tensor::clear_grad() {
  auto& g = checked(impl_).grad;
  g.clear();
  g.shrink_to_fit();
}

void Tensor::backward() const {
  auto& root = checked(impl_);
  if (root.data.size() != 1) throw ShapeError("backward() requires a scalar, got " + shape_str(root.shape));
  if (!root.requires_grad) return;

  // Iterative post-order DFS gives a topological order of the recorded graph.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack{{impl_.get(), 0}};
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (node->node && next < node->node->inputs.size()) {
      detail::TensorImpl* child = node->node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  detail::grad_of(impl_)[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* t = *it;
    if (!t->node) continue;
    if (!t->grad.empty()) t->node->backward(t->grad, t->node->inputs);
  }
  // Release the graph; interior gradients are not needed past this point.
  for (detail::TensorImpl* t : order) {
    if (t->node) {
      t->node.reset();
      t->grad.clear();
      t->grad.shrink_to_fit();
      t->requires_grad = false;
    }
  }
}

Tensor Tensor::detach() const {
  auto& impl = checked(impl_);
  return from_values(impl.shape, impl.data, false);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

std::span<float> grad_of(const ImplPtr& impl) {
  if (!impl->requires_grad) return {};
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0f);
  return impl->grad;
}

Tensor make_result(const char* op, Shape shape, std::vector<float> data,
                   std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
  return make_result(op, std::move(shape), std::move(data), std::vector<const Tensor*>(inputs), std::move(backward));
}

Tensor make_result(const char* op, Shape shape, std::vector<float> data,
                   const std::vector<const Tensor*>& inputs, BackwardFn backward) {
  for (float v : data) {
    if (!std::isfinite(v)) {
      bool finite_inputs = true;
      for (const Tensor* in : inputs) {
        for (float x : in->values()) finite_inputs = finite_inputs && std::isfinite(x);
      }
      if (finite_inputs) throw NumericError(std::string("non-finite value produced by ") + op);
      break;
    }
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const Tensor* in : inputs) needs_grad = needs_grad || in->requires_grad();
  }
  if (needs_grad) {
    impl->requires_grad = true;
    auto node = std::make_shared<GradNode>();
    node->op = op;
    node->inputs.reserve(inputs.size());
    for (const Tensor* in : inputs) node->inputs.push_back(in->impl());
    node->backward = std::move(backward);
    impl->node = std::move(node);
  }
  return Tensor(std::move(impl));
}

}  // namespace detail
}  // namespace supra
