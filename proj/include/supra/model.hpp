#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "supra/optim.hpp"
#include "supra/tensor.hpp"

namespace supra {

struct ModelConfig {
  std::size_t clip_length = 120;   // l
  std::size_t window_length = 20;  // w
  std::size_t d_feat = 32;         // input feature width (adapter input)
  std::size_t d_model = 64;
  std::size_t d_key = 16;
  std::size_t d_ff = 128;
  std::size_t n_classes = 7;  // phases, END excluded
  std::size_t n_queries = 4;  // 0 = recognition only
  std::size_t n_heads = 4;
  std::size_t n_encoder_layers = 2;
  std::size_t n_decoder_layers = 1;
  std::size_t n_future_layers = 2;
  double dropout = 0.1;
  double duration_scale = 1800.0;  // seconds
  double layer_norm_eps = 1e-5;

  std::size_t n_windows() const { return clip_length / window_length; }
  /// Index of the END class in next-phase logits.
  std::size_t end_class() const { return n_classes; }
  void validate() const;

  /// l = 3000, w = 20, d_model = 512, d_key = 64, 8 heads.
  static ModelConfig full_scale();

  bool operator==(const ModelConfig&) const = default;
};

/// ln(1 + seconds) / ln(1 + scale)
float normalize_duration(float seconds, float scale);
/// Inverse of normalize_duration, clamped at 0 seconds.
float denormalize_duration(float normalized, float scale);

/// Frames in model space, left-padded: the first `left_pad` rows are padding,
/// the last `right_pad` rows likewise (right padding only occurs when encoding
/// look-ahead targets past the end of a video).
struct Clip {
  Tensor frames;  // [k * w, d_model]
  std::size_t left_pad = 0;
  std::size_t right_pad = 0;

  std::size_t length() const { return frames.dim(0); }
  std::size_t valid() const { return length() - left_pad - right_pad; }
};

/// Running-max state carried in from frames before a clip.
struct KeyCarry {
  std::vector<float> running_max;  // [d_key]; empty when nothing precedes the clip
  std::size_t frames = 0;

  bool empty() const { return running_max.empty(); }
};

struct KeyBank {
  Tensor keys;         // [w, d_key], cumulative-max keys of the last w frames
  Tensor running_max;  // [d_key], equal to the last row of keys
  std::size_t frames_seen = 0;
  /// Rows of `keys` backed by real frames (the rest replicate the first real row).
  std::size_t valid = 0;
};

struct RecognitionOutput {
  Tensor frame_logits;  // [w, C]
  Tensor frame_probs() const;
};

struct SegmentPrediction {
  Tensor next_phase_logits;  // [n_queries, C + 1]
  Tensor durations;          // [n_queries], normalized
  Tensor key_segments;       // [n_queries, d_key]
};

struct ForwardOutput {
  Tensor encoded;  // [l, d_model]
  KeyBank bank;
  RecognitionOutput recognition;
  std::optional<SegmentPrediction> segments;
};

/// Past-present encoder-decoder over non-overlapping windows, cumulative-max
/// key compression, future decoder over learned segment queries, a fused
/// frame classifier and segment heads.
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  // Parameters are shared handles; a copy would alias them.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterList& parameters() { return params_; }
  const ParameterList& parameters() const { return params_; }

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }
  void seed_dropout(std::uint64_t seed) { rng_.seed(seed); }

  /// Applies the input adapter to raw features [T, d_feat] (T <= l) and
  /// left-pads with zeros to length l.
  Clip embed(const Tensor& features) const;
  /// As embed(), padding to the next multiple of w instead of l. Any extra
  /// right padding is appended after the real frames.
  Clip embed_windows(const Tensor& features, std::size_t right_pad = 0) const;

  Tensor encode_past_present(const Clip& clip) const;
  /// Window-local encoding for any clip whose length is a multiple of w.
  Tensor encode_windows(const Clip& clip) const;

  /// Learned d_model -> d_key projection of each row.
  Tensor project_keys(const Tensor& encoded) const;
  KeyBank compress_keys(const Tensor& encoded, const Clip& clip, const KeyCarry& carry = {}) const;

  Tensor decode_future(const KeyBank& bank) const;
  Tensor compress_segments(const Tensor& segments) const;
  RecognitionOutput fuse_and_classify(const Tensor& encoded, const KeyBank& bank) const;
  /// Classifier head applied to frame embeddings [w, d_model] without any key input.
  Tensor classify_frames(const Tensor& fused) const;
  SegmentPrediction predict_segments(const Tensor& decoded) const;

  ForwardOutput forward(const Clip& clip, const KeyCarry& carry = {}) const;

 private:
  struct LinearRef {
    Tensor weight, bias;
    Tensor operator()(const Tensor& x) const;
  };
  struct NormRef {
    Tensor gain, bias;
    float eps;
    Tensor operator()(const Tensor& x) const;
  };
  struct AttentionRef {
    LinearRef q, k, v, o;
  };
  struct FeedForwardRef {
    LinearRef fc1, fc2;
  };
  struct EncoderLayerRef {
    NormRef norm1, norm2;
    AttentionRef self_attn;
    FeedForwardRef ff;
  };
  struct DecoderLayerRef {
    NormRef norm1, norm2, norm3;
    AttentionRef self_attn, cross_attn;
    FeedForwardRef ff;
  };

  LinearRef make_linear(const std::string& name, std::size_t in, std::size_t out);
  NormRef make_norm(const std::string& name, std::size_t width);
  AttentionRef make_attention(const std::string& name);
  FeedForwardRef make_ff(const std::string& name);
  Tensor make_embedding(const std::string& name, std::size_t rows, std::size_t cols, float scale);

  Tensor attend(const AttentionRef& attn, const Tensor& query, const Tensor& memory, const Tensor& mask) const;
  Tensor feed_forward(const FeedForwardRef& ff, const Tensor& x) const;
  Tensor encoder_layer(const EncoderLayerRef& layer, const Tensor& x, const Tensor& mask) const;
  Tensor decoder_layer(const DecoderLayerRef& layer, const Tensor& x, const Tensor& memory, const Tensor& self_mask,
                       const Tensor& cross_mask) const;
  Tensor drop(const Tensor& x) const;

  ModelConfig config_;
  ParameterList params_;
  std::uint64_t init_seed_;
  mutable std::mt19937_64 rng_;
  bool training_ = false;

  LinearRef input_;
  Tensor window_pos_;
  std::vector<EncoderLayerRef> encoder_;
  std::optional<NormRef> encoder_norm_;
  std::vector<DecoderLayerRef> decoder_;
  std::optional<NormRef> decoder_norm_;
  LinearRef key_proj_;
  LinearRef key_up_;
  LinearRef fuse_fc_;
  NormRef fuse_norm_;
  LinearRef classifier_;
  // Future branch; present only when n_queries > 0.
  Tensor queries_;
  Tensor memory_pos_;
  LinearRef memory_in_;
  std::vector<DecoderLayerRef> future_;
  std::optional<NormRef> future_norm_;
  LinearRef segment_comp_;
  LinearRef phase_head_;
  LinearRef duration_head_;
};

/// Parameters belonging to the future branch (decoder, queries and segment heads).
bool is_future_parameter(const std::string& name);

}  // namespace supra
