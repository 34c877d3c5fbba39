#include "afd/model.hpp"

#include <cstring>

namespace afd {

void ModelConfig::validate() const {
  encoder.validate();
  lm.validate();
  if (lm.audio_dim != encoder.model_dim)
    throw ShapeError("model config: lm audio width " + std::to_string(lm.audio_dim) + " differs from encoder width " +
                     std::to_string(encoder.model_dim));
  if (!(tau > 0.0)) throw Error("model config: tau must be positive");
}

ModelConfig desk_model_config() {
  ModelConfig c;
  auto& e = c.encoder;
  e.feature_dim = 8;
  e.model_dim = 32;
  e.tokens_per_window = 16;
  e.frame_rate = 10.0;
  e.head_dim = 16;
  e.encoder_layers = 1;
  e.encoder_heads = 4;
  e.encoder_inner = 64;
  e.transform_layers = 3;
  e.transform_heads = 8;
  e.transform_inner = 64;
  auto& l = c.lm;
  l.layers = 2;
  l.dim = 32;
  l.heads = 4;
  l.inner = 64;
  l.max_len = 96;
  l.audio_dim = e.model_dim;
  l.xattn_freq = 1;
  l.xattn_heads = 4;
  return c;
}

AlmModel::AlmModel(const ModelConfig& config)
    : config_((config.validate(), config)),
      store_(config.seed),
      audio_(store_, config_.encoder),
      text_(store_, config_.encoder),
      transform_(store_, config_.encoder),
      lm_(store_, config_.lm) {}

Tensor AlmModel::audio_tokens(const encoders::SegmentedClip& clip, ops::AttentionCounter* counter) const {
  return transform_(audio_.dense_tokens(clip, counter), counter);
}

std::uint64_t component_hash(const nn::ParamStore& store, nn::Component component) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : store.params()) {
    if (p.component != component) continue;
    for (char c : p.name) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    for (double v : p.value.values()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

}  // namespace afd
