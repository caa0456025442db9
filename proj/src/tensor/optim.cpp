#include "supra/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace supra {

Tensor& ParameterList::add(std::string name, Tensor tensor) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  tensor.set_requires_grad(true);
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), std::move(tensor)});
  return params_.back().tensor;
}

const Tensor& ParameterList::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return params_[it->second].tensor;
}

Tensor& ParameterList::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return params_[it->second].tensor;
}

std::size_t ParameterList::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

std::vector<std::string> ParameterList::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.name);
  return out;
}

void ParameterList::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

double LrSchedule::at(double epoch_fraction) const {
  const double e = std::max(0.0, epoch_fraction);
  if (warmup_epochs > 0.0 && e < warmup_epochs) return base_lr * e / warmup_epochs;
  const double decay = total_epochs - warmup_epochs;
  if (decay <= 0.0) return base_lr;
  const double progress = std::min(1.0, (e - warmup_epochs) / decay);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double global_grad_norm(const ParameterList& params) {
  double acc = 0.0;
  for (const auto& p : params.items()) {
    for (float g : p.tensor.grad()) acc += static_cast<double>(g) * g;
  }
  return std::sqrt(acc);
}

double sgd_step(ParameterList& params, OptimizerState& state, double epoch_fraction) {
  for (const auto& p : params.items()) {
    if (!p.tensor.has_grad()) throw std::logic_error("sgd_step: parameter '" + p.name + "' has no gradient");
  }
  const double lr = state.schedule.at(epoch_fraction);
  float clip_scale = 1.0f;
  if (state.grad_clip > 0.0) {
    const double norm = global_grad_norm(params);
    if (norm > state.grad_clip) clip_scale = static_cast<float>(state.grad_clip / norm);
  }
  const float mu = static_cast<float>(state.momentum);
  const float wd = static_cast<float>(state.weight_decay);
  const float lrf = static_cast<float>(lr);
  for (auto& p : params.items()) {
    auto& buf = state.momentum_buffers[p.name];
    auto values = p.tensor.values_mut();
    auto grad = p.tensor.grad();
    if (buf.empty()) buf.assign(values.size(), 0.0f);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const float g = grad[i] * clip_scale + wd * values[i];
      buf[i] = mu * buf[i] + g;
      values[i] -= lrf * buf[i];
    }
    p.tensor.clear_grad();
  }
  ++state.step;
  return lr;
}

}  // namespace supra
