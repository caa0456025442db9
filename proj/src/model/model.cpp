#include "supra/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "supra/errors.hpp"
#include "supra/ops.hpp"

namespace supra {

namespace {

constexpr float kMaskValue = -1e9f;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// splitmix64 finalizer; decorrelates the per-parameter seeds.
std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double normal(std::mt19937_64& rng) {
  const double u1 = std::max(uniform01(rng), 1e-300);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Additive attention mask [n, heads, q_len, k_len] hiding padded key positions
// of each window. Undefined when nothing is padded.
Tensor padding_mask(std::size_t first_window, std::size_t n_windows, std::size_t w, std::size_t heads,
                    std::size_t q_len, std::size_t valid_begin, std::size_t valid_end) {
  const std::size_t begin = first_window * w;
  const std::size_t end = (first_window + n_windows) * w;
  if (valid_begin <= begin && valid_end >= end) return {};
  std::vector<float> m(n_windows * heads * q_len * w, 0.0f);
  for (std::size_t a = 0; a < n_windows; ++a) {
    for (std::size_t p = 0; p < w; ++p) {
      const std::size_t g = (first_window + a) * w + p;
      if (g >= valid_begin && g < valid_end) continue;
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t q = 0; q < q_len; ++q) m[((a * heads + h) * q_len + q) * w + p] = kMaskValue;
      }
    }
  }
  return Tensor::from_values({n_windows, heads, q_len, w}, std::move(m));
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("model config: " + what); };
  if (window_length == 0 || clip_length == 0) fail("clip_length and window_length must be positive");
  if (clip_length % window_length != 0) fail("clip_length must be a multiple of window_length");
  if (d_model == 0 || d_key == 0 || d_feat == 0 || d_ff == 0) fail("widths must be positive");
  if (n_heads == 0 || d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (d_key > d_model) fail("d_key must not exceed d_model");
  if (n_classes < 2) fail("n_classes must be at least 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (!(duration_scale > 0.0)) fail("duration_scale must be positive");
  if (!(layer_norm_eps > 0.0)) fail("layer_norm_eps must be positive");
}

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.clip_length = 3000;
  c.window_length = 20;
  c.d_feat = 768;
  c.d_model = 512;
  c.d_key = 64;
  c.d_ff = 2048;
  c.n_heads = 8;
  return c;
}

float normalize_duration(float seconds, float scale) {
  return std::log1p(std::max(0.0f, seconds)) / std::log1p(scale);
}

float denormalize_duration(float normalized, float scale) {
  return std::max(0.0f, std::expm1(normalized * std::log1p(scale)));
}

Tensor RecognitionOutput::frame_probs() const { return softmax(frame_logits, -1); }

bool is_future_parameter(const std::string& name) { return name.rfind("future.", 0) == 0; }

Tensor Model::LinearRef::operator()(const Tensor& x) const { return linear(x, weight, bias); }

Tensor Model::NormRef::operator()(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }

Model::LinearRef Model::make_linear(const std::string& name, std::size_t in, std::size_t out) {
  std::mt19937_64 rng(mix(init_seed_ ^ fnv1a(name)));
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<float> w(in * out);
  for (float& v : w) v = static_cast<float>((2.0 * uniform01(rng) - 1.0) * bound);
  LinearRef ref;
  ref.weight = params_.add(name + ".weight", Tensor::from_values({in, out}, std::move(w)));
  ref.bias = params_.add(name + ".bias", Tensor::zeros({out}));
  return ref;
}

Model::NormRef Model::make_norm(const std::string& name, std::size_t width) {
  NormRef ref;
  ref.gain = params_.add(name + ".gain", Tensor::full({width}, 1.0f));
  ref.bias = params_.add(name + ".bias", Tensor::zeros({width}));
  ref.eps = static_cast<float>(config_.layer_norm_eps);
  return ref;
}

Model::AttentionRef Model::make_attention(const std::string& name) {
  const std::size_t d = config_.d_model;
  return {make_linear(name + ".q", d, d), make_linear(name + ".k", d, d), make_linear(name + ".v", d, d),
          make_linear(name + ".o", d, d)};
}

Model::FeedForwardRef Model::make_ff(const std::string& name) {
  return {make_linear(name + ".fc1", config_.d_model, config_.d_ff),
          make_linear(name + ".fc2", config_.d_ff, config_.d_model)};
}

Tensor Model::make_embedding(const std::string& name, std::size_t rows, std::size_t cols, float scale) {
  std::mt19937_64 rng(mix(init_seed_ ^ fnv1a(name)));
  std::vector<float> v(rows * cols);
  for (float& x : v) x = static_cast<float>(normal(rng) * scale);
  return params_.add(name, Tensor::from_values({rows, cols}, std::move(v)));
}

Model::Model(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), init_seed_(mix(seed)), rng_(mix(seed ^ 0x5eedull)) {
  config_.validate();
  const std::size_t d = config_.d_model;
  // Each parameter draws from its own stream derived from (seed, name), so the
  // recognition path initializes identically whatever the future branch holds.
  input_ = make_linear("input", config_.d_feat, d);
  window_pos_ = make_embedding("encoder.pos", config_.window_length, d, 0.1f);
  for (std::size_t i = 0; i < config_.n_encoder_layers; ++i) {
    const std::string p = "encoder.layer" + std::to_string(i);
    encoder_.push_back(
        {make_norm(p + ".norm1", d), make_norm(p + ".norm2", d), make_attention(p + ".attn"), make_ff(p + ".ff")});
  }
  if (config_.n_encoder_layers > 0) encoder_norm_ = make_norm("encoder.norm", d);
  for (std::size_t i = 0; i < config_.n_decoder_layers; ++i) {
    const std::string p = "ppdecoder.layer" + std::to_string(i);
    decoder_.push_back({make_norm(p + ".norm1", d), make_norm(p + ".norm2", d), make_norm(p + ".norm3", d),
                        make_attention(p + ".self_attn"), make_attention(p + ".cross_attn"), make_ff(p + ".ff")});
  }
  if (config_.n_decoder_layers > 0) decoder_norm_ = make_norm("ppdecoder.norm", d);
  key_proj_ = make_linear("keys.proj", d, config_.d_key);
  key_up_ = make_linear("fusion.key_up", config_.d_key, d);
  fuse_fc_ = make_linear("fusion.fc", d, d);
  fuse_norm_ = make_norm("fusion.norm", d);
  classifier_ = make_linear("classifier", d, config_.n_classes);

  if (config_.n_queries > 0) {
    queries_ = make_embedding("future.queries", config_.n_queries, d, 0.5f);
    memory_pos_ = make_embedding("future.memory_pos", config_.window_length, d, 0.1f);
    memory_in_ = make_linear("future.memory_in", config_.d_key, d);
    for (std::size_t i = 0; i < config_.n_future_layers; ++i) {
      const std::string p = "future.layer" + std::to_string(i);
      future_.push_back({make_norm(p + ".norm1", d), make_norm(p + ".norm2", d), make_norm(p + ".norm3", d),
                         make_attention(p + ".self_attn"), make_attention(p + ".cross_attn"), make_ff(p + ".ff")});
    }
    if (config_.n_future_layers > 0) future_norm_ = make_norm("future.norm", d);
    segment_comp_ = make_linear("future.compress", d, config_.d_key);
    phase_head_ = make_linear("future.phase_head", d, config_.n_classes + 1);
    duration_head_ = make_linear("future.duration_head", d, 1);
  }
}

Tensor Model::drop(const Tensor& x) const { return dropout(x, static_cast<float>(config_.dropout), training_, rng_); }

Tensor Model::attend(const AttentionRef& attn, const Tensor& query, const Tensor& memory, const Tensor& mask) const {
  const std::size_t n = query.dim(0), lq = query.dim(1), lk = memory.dim(1);
  const std::size_t h = config_.n_heads, dh = config_.d_model / h;
  Tensor q = transpose(reshape(attn.q(query), {n, lq, h, dh}), 1, 2);                       // [n, h, lq, dh]
  Tensor kt = transpose(transpose(reshape(attn.k(memory), {n, lk, h, dh}), 1, 2), 2, 3);   // [n, h, dh, lk]
  Tensor v = transpose(reshape(attn.v(memory), {n, lk, h, dh}), 1, 2);                      // [n, h, lk, dh]
  Tensor scores = mul_scalar(matmul(q, kt), 1.0f / std::sqrt(static_cast<float>(dh)));
  if (mask.defined()) scores = add(scores, mask);
  Tensor ctx = matmul(softmax(scores, -1), v);  // [n, h, lq, dh]
  return attn.o(reshape(transpose(ctx, 1, 2), {n, lq, config_.d_model}));
}

Tensor Model::feed_forward(const FeedForwardRef& ff, const Tensor& x) const { return ff.fc2(gelu(ff.fc1(x))); }

Tensor Model::encoder_layer(const EncoderLayerRef& layer, const Tensor& x, const Tensor& mask) const {
  Tensor h = layer.norm1(x);
  Tensor y = add(x, drop(attend(layer.self_attn, h, h, mask)));
  return add(y, drop(feed_forward(layer.ff, layer.norm2(y))));
}

Tensor Model::decoder_layer(const DecoderLayerRef& layer, const Tensor& x, const Tensor& memory,
                            const Tensor& self_mask, const Tensor& cross_mask) const {
  Tensor h = layer.norm1(x);
  Tensor y = add(x, drop(attend(layer.self_attn, h, h, self_mask)));
  y = add(y, drop(attend(layer.cross_attn, layer.norm2(y), memory, cross_mask)));
  return add(y, drop(feed_forward(layer.ff, layer.norm3(y))));
}

Clip Model::embed(const Tensor& features) const {
  if (features.rank() != 2 || features.dim(1) != config_.d_feat) {
    throw ShapeError("embed: expected features [T, " + std::to_string(config_.d_feat) + "], got " +
                     shape_str(features.shape()));
  }
  const std::size_t t = features.dim(0);
  if (t > config_.clip_length) {
    throw ShapeError("embed: " + std::to_string(t) + " frames exceed clip length " +
                     std::to_string(config_.clip_length));
  }
  Tensor adapted = input_(features);
  Clip clip;
  clip.left_pad = config_.clip_length - t;
  if (clip.left_pad == 0) {
    clip.frames = adapted;
  } else {
    const Tensor parts[] = {Tensor::zeros({clip.left_pad, config_.d_model}), adapted};
    clip.frames = concat(parts, 0);
  }
  return clip;
}

Clip Model::embed_windows(const Tensor& features, std::size_t right_pad) const {
  if (features.rank() != 2 || features.dim(1) != config_.d_feat) {
    throw ShapeError("embed_windows: expected features [T, " + std::to_string(config_.d_feat) + "], got " +
                     shape_str(features.shape()));
  }
  const std::size_t w = config_.window_length;
  const std::size_t total = features.dim(0) + right_pad;
  const std::size_t padded = (total + w - 1) / w * w;
  Clip clip;
  clip.left_pad = padded - total;
  clip.right_pad = right_pad;
  std::vector<Tensor> parts;
  if (clip.left_pad) parts.push_back(Tensor::zeros({clip.left_pad, config_.d_model}));
  parts.push_back(input_(features));
  if (right_pad) parts.push_back(Tensor::zeros({right_pad, config_.d_model}));
  clip.frames = parts.size() == 1 ? parts[0] : concat(parts, 0);
  return clip;
}

Tensor Model::encode_past_present(const Clip& clip) const {
  if (clip.frames.rank() != 2 || clip.length() != config_.clip_length || clip.frames.dim(1) != config_.d_model) {
    throw ShapeError("encode_past_present: expected clip [" + std::to_string(config_.clip_length) + ", " +
                     std::to_string(config_.d_model) + "], got " + shape_str(clip.frames.shape()));
  }
  return encode_windows(clip);
}

Tensor Model::encode_windows(const Clip& clip) const {
  const std::size_t w = config_.window_length, d = config_.d_model;
  const std::size_t len = clip.length();
  if (len % w != 0 || clip.valid() == 0 || clip.left_pad + clip.right_pad >= len) {
    throw ShapeError("encode_windows: clip of " + std::to_string(len) + " frames (" +
                     std::to_string(clip.valid()) + " real) does not tile windows of " + std::to_string(w));
  }
  if (encoder_.empty() && decoder_.empty()) return clip.frames;

  // Windows holding no real frame are skipped and emitted as zeros.
  const std::size_t first = clip.left_pad / w;
  const std::size_t last = (len - clip.right_pad - 1) / w;
  const std::size_t active = last - first + 1;
  Tensor x = reshape(slice(clip.frames, 0, first * w, active * w), {active, w, d});
  x = drop(add(x, window_pos_));
  const Tensor mask =
      padding_mask(first, active, w, config_.n_heads, w, clip.left_pad, len - clip.right_pad);

  for (const auto& layer : encoder_) x = encoder_layer(layer, x, mask);
  Tensor memory = encoder_norm_ ? (*encoder_norm_)(x) : x;
  Tensor y = memory;
  for (const auto& layer : decoder_) y = decoder_layer(layer, y, memory, mask, mask);
  if (decoder_norm_) y = (*decoder_norm_)(y);

  y = reshape(y, {active * w, d});
  std::vector<Tensor> parts;
  if (first > 0) parts.push_back(Tensor::zeros({first * w, d}));
  parts.push_back(y);
  if (last + 1 < len / w) parts.push_back(Tensor::zeros({len - (last + 1) * w, d}));
  return parts.size() == 1 ? parts[0] : concat(parts, 0);
}

Tensor Model::project_keys(const Tensor& encoded) const { return key_proj_(encoded); }

KeyBank Model::compress_keys(const Tensor& encoded, const Clip& clip, const KeyCarry& carry) const {
  const std::size_t w = config_.window_length;
  if (encoded.rank() != 2 || encoded.dim(0) != clip.length() || encoded.dim(1) != config_.d_model) {
    throw ShapeError("compress_keys: encoded " + shape_str(encoded.shape()) + " does not match clip of " +
                     std::to_string(clip.length()) + " frames");
  }
  if (!carry.empty() && carry.running_max.size() != config_.d_key) {
    throw ShapeError("compress_keys: carry width " + std::to_string(carry.running_max.size()) + " != d_key " +
                     std::to_string(config_.d_key));
  }
  const std::size_t valid = clip.valid();
  Tensor raw = project_keys(slice(encoded, 0, clip.left_pad, valid));
  CumMaxResult pooled = cumulative_max_time(raw, carry.running_max);

  KeyBank bank;
  bank.frames_seen = carry.frames + valid;
  bank.valid = std::min(valid, w);
  if (valid >= w) {
    bank.keys = slice(pooled.values, 0, valid - w, w);
  } else {
    // Rows before the first real frame repeat it, keeping the bank monotone.
    auto first = pooled.values.values().subspan(0, config_.d_key);
    std::vector<float> fill;
    fill.reserve((w - valid) * config_.d_key);
    for (std::size_t r = 0; r < w - valid; ++r) fill.insert(fill.end(), first.begin(), first.end());
    const Tensor parts[] = {Tensor::from_values({w - valid, config_.d_key}, std::move(fill)), pooled.values};
    bank.keys = concat(parts, 0);
  }
  bank.running_max = reshape(slice(pooled.values, 0, valid - 1, 1), {config_.d_key});
  return bank;
}

Tensor Model::decode_future(const KeyBank& bank) const {
  if (config_.n_queries == 0) throw ContractError("decode_future: anticipation is disabled (n_queries = 0)");
  const std::size_t w = config_.window_length, d = config_.d_model, nq = config_.n_queries;
  Tensor memory = reshape(add(memory_in_(bank.keys), memory_pos_), {1, w, d});
  Tensor x = reshape(queries_, {1, nq, d});
  const Tensor cross_mask = padding_mask(0, 1, w, config_.n_heads, nq, w - bank.valid, w);
  for (const auto& layer : future_) x = decoder_layer(layer, x, memory, Tensor{}, cross_mask);
  if (future_norm_) x = (*future_norm_)(x);
  return reshape(x, {nq, d});
}

Tensor Model::compress_segments(const Tensor& segments) const {
  if (config_.n_queries == 0) throw ContractError("compress_segments: anticipation is disabled");
  return segment_comp_(segments);
}

Tensor Model::classify_frames(const Tensor& fused) const { return classifier_(fuse_norm_(fused)); }

RecognitionOutput Model::fuse_and_classify(const Tensor& encoded, const KeyBank& bank) const {
  const std::size_t w = config_.window_length;
  Tensor last = slice(encoded, 0, encoded.dim(0) - w, w);
  Tensor summed = add(last, key_up_(bank.keys));
  Tensor fused = add(summed, gelu(fuse_fc_(summed)));
  return {classify_frames(fused)};
}

SegmentPrediction Model::predict_segments(const Tensor& decoded) const {
  if (config_.n_queries == 0) throw ContractError("predict_segments: anticipation is disabled");
  SegmentPrediction out;
  out.next_phase_logits = phase_head_(decoded);
  out.durations = reshape(duration_head_(decoded), {decoded.dim(0)});
  out.key_segments = compress_segments(decoded);
  return out;
}

ForwardOutput Model::forward(const Clip& clip, const KeyCarry& carry) const {
  ForwardOutput out;
  out.encoded = encode_past_present(clip);
  out.bank = compress_keys(out.encoded, clip, carry);
  out.recognition = fuse_and_classify(out.encoded, out.bank);
  if (config_.n_queries > 0) out.segments = predict_segments(decode_future(out.bank));
  return out;
}

}  // namespace supra
