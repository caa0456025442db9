#include "supra/streaming.hpp"

#include <algorithm>

#include "supra/errors.hpp"
#include "supra/ops.hpp"

namespace supra {

void RunningMax::update(std::span<const float> key) {
  if (width_ == 0) width_ = key.size();
  if (key.size() != width_) {
    throw ShapeError("RunningMax: key of width " + std::to_string(key.size()) + ", expected " +
                     std::to_string(width_));
  }
  if (count_ == 0) {
    state_.assign(key.begin(), key.end());
  } else {
    for (std::size_t i = 0; i < width_; ++i) state_[i] = std::max(state_[i], key[i]);
  }
  ++count_;
}

StreamingEngine::StreamingEngine(const Model& model)
    : model_(&model), residues_(model.config().window_length, RunningMax(model.config().d_key)) {}

void StreamingEngine::reset() {
  buffer_.clear();
  frames_seen_ = 0;
  if (model_) residues_.assign(model_->config().window_length, RunningMax(model_->config().d_key));
}

StreamingOutput StreamingEngine::step(std::span<const float> frame_features) {
  if (!model_) throw ContractError("StreamingEngine: engine is not initialized with a model");
  const ModelConfig& cfg = model_->config();
  if (frame_features.size() != cfg.d_feat) {
    throw ShapeError("StreamingEngine: frame of width " + std::to_string(frame_features.size()) + ", expected " +
                     std::to_string(cfg.d_feat));
  }
  const std::size_t w = cfg.window_length;
  buffer_.emplace_back(frame_features.begin(), frame_features.end());
  if (buffer_.size() > w) buffer_.pop_front();

  const std::size_t t = frames_seen_;
  const std::size_t v = buffer_.size();
  std::vector<float> window;
  window.reserve(v * cfg.d_feat);
  for (const auto& f : buffer_) window.insert(window.end(), f.begin(), f.end());

  NoGradGuard no_grad;
  const Clip clip = model_->embed_windows(Tensor::from_values({v, cfg.d_feat}, std::move(window)));
  const Tensor encoded = model_->encode_windows(clip);

  RunningMax& residue = residues_[t % w];
  KeyCarry carry;
  if (!residue.empty()) {
    carry.running_max.assign(residue.values().begin(), residue.values().end());
    carry.frames = t + 1 - v;
  }

  StreamingOutput out;
  out.frame_index = t;
  out.bank = model_->compress_keys(encoded, clip, carry);
  residue.update(out.bank.running_max.values());

  const Tensor probs = model_->fuse_and_classify(encoded, out.bank).frame_probs();
  auto last = probs.values().subspan((w - 1) * cfg.n_classes, cfg.n_classes);
  out.probs.assign(last.begin(), last.end());
  out.phase = static_cast<std::size_t>(std::max_element(last.begin(), last.end()) - last.begin());
  if (cfg.n_queries > 0) out.segments = model_->predict_segments(model_->decode_future(out.bank));
  ++frames_seen_;
  return out;
}

}  // namespace supra
