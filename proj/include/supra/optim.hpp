#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "supra/tensor.hpp"

namespace supra {

struct Parameter {
  std::string name;
  Tensor tensor;
};

/// Named trainable tensors in registration order. Names are unique.
class ParameterList {
 public:
  Tensor& add(std::string name, Tensor tensor);
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  std::size_t total_elements() const;
  std::vector<Parameter>& items() { return params_; }
  const std::vector<Parameter>& items() const { return params_; }
  std::vector<std::string> names() const;

  /// Zero-filled gradient on every parameter.
  void zero_grad();

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

/// Linear warmup to the base rate, then cosine decay to zero at total_epochs.
struct LrSchedule {
  double base_lr = 3e-4;
  double warmup_epochs = 5.0;
  double total_epochs = 40.0;

  double at(double epoch_fraction) const;
};

struct OptimizerState {
  LrSchedule schedule;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  /// Global gradient-norm clip; 0 disables clipping.
  double grad_clip = 0.0;
  std::int64_t step = 0;
  std::map<std::string, std::vector<float>> momentum_buffers;
};

/// Heavy-ball SGD with L2 weight decay:
///   g <- grad + wd * p;  buf <- mu * buf + g;  p <- p - lr * buf.
/// Requires a gradient on every parameter (throws naming the first missing
/// one), clears gradients afterwards and returns the learning rate used.
double sgd_step(ParameterList& params, OptimizerState& state, double epoch_fraction);

double global_grad_norm(const ParameterList& params);

}  // namespace supra
