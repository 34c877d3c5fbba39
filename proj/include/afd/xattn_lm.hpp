#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "afd/nn.hpp"
#include "afd/ops.hpp"
#include "afd/tensor.hpp"

namespace afd::lm {

struct LmConfig {
  std::size_t vocab = 256;  // bytes
  std::size_t layers = 4;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t inner = 128;
  std::size_t max_len = 256;
  std::size_t audio_dim = 64;   // width of incoming audio tokens
  std::size_t xattn_freq = 1;   // xattn before every f-th LM block
  std::size_t xattn_heads = 4;
  bool per_layer_audio_proj = false;

  void validate() const;
};

/// Number of xattn blocks: one before each block b with b % freq == 0.
std::size_t xattn_insertions(std::size_t layers, std::size_t freq);

/// Gated cross-attention plus gated feed-forward, both residual:
///   h += tanh(gate_attn) * XAttn(LN(h), audio)
///   h += tanh(gate_dense) * FFW(LN(h))
struct XattnBlock {
  nn::LayerNorm norm_attn, norm_ff;
  nn::Linear q, k, v, o;
  nn::FeedForward ff;
  Tensor gate_attn, gate_dense;
  std::size_t heads = 1;

  XattnBlock() = default;
  XattnBlock(nn::ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads, std::size_t inner);
  Tensor operator()(const Tensor& h, const Tensor& audio, ops::AttentionCounter* counter = nullptr) const;
};

struct LmOutput {
  Tensor logits;  // l1 x vocab
  ops::AttentionCounter counter;
};

/// Byte-level decoder-only LM with XATTN-Dense conditioning.
class ToyLM {
 public:
  ToyLM(nn::ParamStore& store, const LmConfig& config);

  /// `audio` is (l2 x audio_dim) or undefined; when undefined every xattn block is skipped.
  LmOutput forward(std::span<const std::size_t> tokens, const Tensor& audio = Tensor()) const;
  /// Mean next-token cross-entropy over tokens[1..] given tokens[..n-1].
  Tensor next_token_loss(std::span<const std::size_t> tokens, const Tensor& audio = Tensor()) const;

  const LmConfig& config() const { return config_; }
  const std::vector<XattnBlock>& xattn_blocks() const { return xattn_; }
  std::size_t xattn_count() const { return xattn_.size(); }

 private:
  Tensor project_audio(const Tensor& audio, std::size_t xattn_index) const;

  LmConfig config_;
  Tensor embedding_;
  Tensor positions_;
  std::vector<nn::TransformerBlock> blocks_;
  std::vector<XattnBlock> xattn_;
  std::vector<nn::Linear> audio_proj_;  // one shared, or one per xattn block
  nn::LayerNorm final_norm_;
  nn::Linear head_;
};

struct AttentionOpCounts {
  std::uint64_t cross_per_layer = 0;      // l1 * l2
  std::uint64_t cross_total = 0;          // l1 * l2 * n_xattn
  std::uint64_t prefix_equivalent = 0;    // (l1 + l2)^2 per self-attention layer
};

AttentionOpCounts count_attention_ops(std::uint64_t l1, std::uint64_t l2, std::uint64_t n_xattn);

}  // namespace afd::lm
