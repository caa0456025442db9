#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "supra/model.hpp"

namespace supra {

/// Elementwise running maximum over a stream of key vectors; O(d) per update.
class RunningMax {
 public:
  explicit RunningMax(std::size_t width = 0) : width_(width) {}

  void update(std::span<const float> key);
  bool empty() const { return count_ == 0; }
  std::size_t count() const { return count_; }
  std::span<const float> values() const { return state_; }

 private:
  std::size_t width_;
  std::size_t count_ = 0;
  std::vector<float> state_;
};

struct StreamingOutput {
  std::size_t frame_index = 0;
  std::size_t phase = 0;
  std::vector<float> probs;                 // [C] for the newest frame
  std::optional<SegmentPrediction> segments;
  KeyBank bank;
};

/// Online inference over a frozen model, one frame at a time.
///
/// The engine keeps the last w raw frames and, for each residue of the frame
/// index modulo w, the running key maximum over every earlier window ending at
/// that residue. Window boundaries therefore line up with those of a batch clip
/// ending at the current frame, and the newest frame's outputs equal the batch
/// forward over any clip that covers the whole stream (dropout disabled).
class StreamingEngine {
 public:
  StreamingEngine() = default;
  explicit StreamingEngine(const Model& model);

  bool initialized() const { return model_ != nullptr; }
  StreamingOutput step(std::span<const float> frame_features);
  void reset();

  std::size_t frames_seen() const { return frames_seen_; }
  /// Key carry a batch clip ending at the next frame would need for frames
  /// before it. Exposed for tests and batch evaluation.
  const RunningMax& residue_state(std::size_t residue) const { return residues_.at(residue); }

 private:
  const Model* model_ = nullptr;
  std::deque<std::vector<float>> buffer_;
  std::vector<RunningMax> residues_;
  std::size_t frames_seen_ = 0;
};

}  // namespace supra
