#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "afd/nn.hpp"
#include "afd/ops.hpp"
#include "afd/tensor.hpp"

namespace afd::encoders {

inline constexpr double kRopeBase = 4096.0;
inline constexpr std::size_t kStage1Windows = 3;
inline constexpr std::size_t kStage2Windows = 9;
inline constexpr std::size_t kLongAudioWindows = 30;

struct EncoderConfig {
  std::size_t feature_dim = 16;          // per-frame synthetic feature width
  std::size_t model_dim = 64;            // token width d
  std::size_t tokens_per_window = 64;    // t
  double window_seconds = 10.0;
  double frame_rate = 100.0;             // frames per second (10 ms frames)
  std::size_t head_dim = 32;             // CLAP embedding width
  std::size_t encoder_layers = 2;
  std::size_t encoder_heads = 4;
  std::size_t encoder_inner = 128;
  std::size_t transform_layers = 3;
  std::size_t transform_heads = 8;
  std::size_t transform_inner = 128;
  std::size_t text_vocab = 256;
  double rope_base = kRopeBase;
  bool use_rope = true;
  bool rope_per_layer = false;  // rotate q/k inside every transform layer instead of once

  std::size_t window_frames() const;
  void validate() const;
};

/// Synthetic stand-in for decoded audio: F x feature_dim frame features.
struct AudioClip {
  std::string id;
  Tensor frames;
  double duration_s = 0.0;
  double frame_rate = 100.0;

  std::size_t frame_count() const { return frames.defined() ? frames.rows() : 0; }
  /// Throws when the clip is empty or the duration disagrees with F by more than one frame.
  void validate() const;
};

/// Frames drawn from a per-concept Gaussian mixture (means fixed by the
/// concept id, noise by the item seed), so clips of one concept cluster.
AudioClip synthesize_clip(std::string id, std::int64_t concept_id, std::uint64_t feature_seed, double duration_s,
                          const EncoderConfig& config);

/// min(ceil(duration / window), max_windows), at least 1.
std::size_t window_count(double duration_s, double window_seconds, std::size_t max_windows);

struct SegmentedClip {
  std::vector<Tensor> windows;         // each window_frames x feature_dim
  std::size_t window_frames = 0;
  std::size_t valid_frames_last = 0;   // real frames in the final window

  std::size_t count() const { return windows.size(); }
  double last_pad_fraction() const;
};

/// Non-overlapping windows of `window_seconds`; the last one is zero-padded
/// and anything past `max_windows` windows is dropped.
SegmentedClip segment_windows(const AudioClip& clip, const EncoderConfig& config, std::size_t max_windows);

/// Concatenated per-window token grids.
struct WindowedAudioTokens {
  Tensor tokens;                        // (w*t) x d
  std::size_t window_count = 0;
  std::size_t tokens_per_window = 0;
  std::vector<std::size_t> positions;   // 0 .. w*t-1
  std::vector<bool> pad_mask;           // true only for trailing tokens of the last window
};

enum class ExtractionMode { dense, head };
ExtractionMode parse_extraction_mode(std::string_view name);

/// Audio tower: patch embedding of pooled frames, self-attention layers, and
/// an MLP head. Dense features are the pre-head token grid.
class AudioEncoder {
 public:
  AudioEncoder(nn::ParamStore& store, const EncoderConfig& config);

  /// dense: t x d; head: 1 x head_dim (unnormalized).
  Tensor encode_window(const Tensor& window_frames, ExtractionMode mode,
                       ops::AttentionCounter* counter = nullptr) const;
  WindowedAudioTokens dense_tokens(const SegmentedClip& clip, ops::AttentionCounter* counter = nullptr) const;
  /// Unit-norm 1 x head_dim embedding: mean of window heads, normalized.
  Tensor clap_embedding(const SegmentedClip& clip) const;

  const nn::Linear& head_output() const { return head_out_; }
  const nn::Linear& patch() const { return patch_; }

 private:
  Tensor pool_frames(const Tensor& window_frames) const;
  Tensor head_of(const Tensor& dense) const;

  EncoderConfig config_;
  nn::Linear patch_;
  std::vector<nn::TransformerBlock> layers_;
  nn::Linear head_hidden_;
  nn::Linear head_out_;
};

/// Rotates each (2k, 2k+1) pair of row r by positions[r] * base^(-2k/d).
Tensor apply_rope(const Tensor& tokens, std::span<const std::size_t> positions, double base = kRopeBase);
Tensor apply_rope(const Tensor& tokens, double base = kRopeBase);

/// RoPE followed by the self-attention representation-transformation stack.
class RepresentationTransform {
 public:
  RepresentationTransform(nn::ParamStore& store, const EncoderConfig& config);

  Tensor operator()(const WindowedAudioTokens& audio, ops::AttentionCounter* counter = nullptr) const;
  std::size_t layer_count() const { return layers_.size(); }
  const std::vector<nn::TransformerBlock>& layers() const { return layers_; }

 private:
  EncoderConfig config_;
  std::vector<nn::TransformerBlock> layers_;
};

std::vector<std::size_t> byte_tokens(std::string_view text);

/// Text tower: byte embeddings, mean pooled, MLP projection, L2-normalized.
class TextEncoder {
 public:
  TextEncoder(nn::ParamStore& store, const EncoderConfig& config);

  Tensor encode_tokens(std::span<const std::size_t> tokens) const;  // 1 x head_dim, unit norm
  Tensor encode(std::string_view text) const { return encode_tokens(byte_tokens(text)); }

 private:
  EncoderConfig config_;
  Tensor embedding_;
  nn::Linear hidden_;
  nn::Linear out_;
};

}  // namespace afd::encoders
