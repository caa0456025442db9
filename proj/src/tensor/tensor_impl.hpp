#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

#include "supra/tensor.hpp"

namespace supra::detail {

using ImplPtr = std::shared_ptr<TensorImpl>;

/// Receives the output gradient and accumulates into the node's inputs.
using BackwardFn = std::function<void(std::span<const float> out_grad, std::span<const ImplPtr> inputs)>;

struct GradNode {
  const char* op = "";
  std::vector<ImplPtr> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;
  bool requires_grad = false;
  std::shared_ptr<GradNode> node;
};

/// Gradient buffer of an input, allocated on first use. Empty span when the
/// input does not take gradients.
std::span<float> grad_of(const ImplPtr& impl);

/// Wraps a freshly computed output, validates finiteness and records the
/// backward closure when any input requires a gradient.
Tensor make_result(const char* op, Shape shape, std::vector<float> data,
                   std::initializer_list<const Tensor*> inputs, BackwardFn backward);
Tensor make_result(const char* op, Shape shape, std::vector<float> data,
                   const std::vector<const Tensor*>& inputs, BackwardFn backward);

}  // namespace supra::detail
