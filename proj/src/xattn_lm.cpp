#include "afd/xattn_lm.hpp"

#include <cmath>

namespace afd::lm {

void LmConfig::validate() const {
  if (vocab == 0 || dim == 0 || max_len == 0 || audio_dim == 0) throw Error("lm config: sizes must be positive");
  if (heads == 0 || dim % heads != 0) throw ShapeError("lm config: width not divisible by heads");
  if (xattn_heads == 0 || dim % xattn_heads != 0) throw ShapeError("lm config: width not divisible by xattn heads");
  if (xattn_freq == 0) throw Error("lm config: xattn frequency must be at least 1");
}

std::size_t xattn_insertions(std::size_t layers, std::size_t freq) {
  if (freq == 0) throw Error("xattn frequency must be at least 1");
  return (layers + freq - 1) / freq;
}

XattnBlock::XattnBlock(nn::ParamStore& store, const std::string& name, std::size_t dim, std::size_t n_heads,
                       std::size_t inner)
    : norm_attn(store, name + ".norm_attn", nn::Component::transform_xattn, dim),
      norm_ff(store, name + ".norm_ff", nn::Component::transform_xattn, dim),
      q(store, name + ".q", nn::Component::transform_xattn, dim, dim),
      k(store, name + ".k", nn::Component::transform_xattn, dim, dim),
      v(store, name + ".v", nn::Component::transform_xattn, dim, dim),
      o(store, name + ".o", nn::Component::transform_xattn, dim, dim),
      ff(store, name + ".ff", nn::Component::transform_xattn, dim, inner),
      gate_attn(store.add(name + ".gate_attn", nn::Component::transform_xattn, {1}, nn::Init::zeros)),
      gate_dense(store.add(name + ".gate_dense", nn::Component::transform_xattn, {1}, nn::Init::zeros)),
      heads(n_heads) {}

Tensor XattnBlock::operator()(const Tensor& h, const Tensor& audio, ops::AttentionCounter* counter) const {
  const std::size_t d = q.weight.cols();
  if (h.rank() != 2 || h.cols() != d || audio.rank() != 2 || audio.cols() != d)
    throw ShapeError("xattn: text " + shape_str(h.shape()) + " and audio " + shape_str(audio.shape()) +
                     " must both have width " + std::to_string(d));
  const Tensor x = norm_attn(h);
  const Tensor attn = o(ops::attention(q(x), k(audio), v(audio), {heads, false, true, counter}));
  const Tensor mid = ops::add(h, ops::mul(ops::tanh(gate_attn), attn));
  return ops::add(mid, ops::mul(ops::tanh(gate_dense), ff(norm_ff(mid))));
}

ToyLM::ToyLM(nn::ParamStore& store, const LmConfig& config) : config_(config) {
  config_.validate();
  const auto c = nn::Component::lm;
  const std::size_t d = config_.dim;
  embedding_ = store.add("lm.embedding", c, {config_.vocab, d}, nn::Init::normal_fan_in,
                         std::sqrt(static_cast<double>(config_.vocab)));
  positions_ = store.add("lm.positions", c, {config_.max_len, d}, nn::Init::normal_fan_in,
                         0.1 * std::sqrt(static_cast<double>(config_.max_len)));
  for (std::size_t b = 0; b < config_.layers; ++b) {
    if (b % config_.xattn_freq == 0) {
      const std::string name = "xattn.block" + std::to_string(xattn_.size());
      xattn_.emplace_back(store, name, d, config_.xattn_heads, config_.inner);
      if (config_.per_layer_audio_proj || audio_proj_.empty())
        audio_proj_.emplace_back(store,
                                 config_.per_layer_audio_proj ? name + ".audio_proj" : std::string("xattn.audio_proj"),
                                 nn::Component::transform_xattn, config_.audio_dim, d);
    }
    blocks_.emplace_back(store, "lm.block" + std::to_string(b), c, d, config_.heads, config_.inner, true);
  }
  final_norm_ = nn::LayerNorm(store, "lm.final_norm", c, d);
  head_ = nn::Linear(store, "lm.head", c, d, config_.vocab);
}

Tensor ToyLM::project_audio(const Tensor& audio, std::size_t xattn_index) const {
  return audio_proj_[config_.per_layer_audio_proj ? xattn_index : 0](audio);
}

LmOutput ToyLM::forward(std::span<const std::size_t> tokens, const Tensor& audio) const {
  if (tokens.empty()) throw Error("lm: empty token sequence");
  if (tokens.size() > config_.max_len)
    throw Error("lm: sequence of " + std::to_string(tokens.size()) + " exceeds max length " +
                std::to_string(config_.max_len));
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] >= config_.vocab)
      throw Error("lm: unknown token id " + std::to_string(tokens[i]) + " at position " + std::to_string(i));
  const bool with_audio = audio.defined();
  if (with_audio && (audio.rank() != 2 || audio.cols() != config_.audio_dim))
    throw ShapeError("lm: audio tokens " + shape_str(audio.shape()) + " do not have width " +
                     std::to_string(config_.audio_dim));

  LmOutput out;
  Tensor x = ops::add(ops::gather_rows(embedding_, tokens), ops::slice(positions_, 0, 0, tokens.size()));
  Tensor shared;
  if (with_audio && !config_.per_layer_audio_proj) shared = project_audio(audio, 0);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    if (with_audio && b % config_.xattn_freq == 0) {
      const std::size_t xi = b / config_.xattn_freq;
      x = xattn_[xi](x, config_.per_layer_audio_proj ? project_audio(audio, xi) : shared, &out.counter);
    }
    x = blocks_[b](x, &out.counter);
  }
  out.logits = head_(final_norm_(x));
  return out;
}

Tensor ToyLM::next_token_loss(std::span<const std::size_t> tokens, const Tensor& audio) const {
  if (tokens.size() < 2) throw Error("lm: next-token loss needs at least two tokens");
  const Tensor logits = forward(tokens.first(tokens.size() - 1), audio).logits;
  return ops::cross_entropy(logits, tokens.subspan(1));
}

AttentionOpCounts count_attention_ops(std::uint64_t l1, std::uint64_t l2, std::uint64_t n_xattn) {
  AttentionOpCounts c;
  c.cross_per_layer = l1 * l2;
  c.cross_total = c.cross_per_layer * n_xattn;
  c.prefix_equivalent = (l1 + l2) * (l1 + l2);
  return c;
}

}  // namespace afd::lm
