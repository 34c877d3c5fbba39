#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "afd/afclap.hpp"
#include "afd/encoders.hpp"
#include "afd/nn.hpp"
#include "afd/xattn_lm.hpp"

namespace afd {

struct ModelConfig {
  encoders::EncoderConfig encoder;
  lm::LmConfig lm;
  std::uint64_t seed = 0;
  double tau = afclap::kDefaultTau;

  void validate() const;
};

/// Small dims used by the acceptance runs and CLI defaults.
ModelConfig desk_model_config();

/// CLAP towers, representation transform and the conditioned toy LM, all
/// registered in one parameter store.
class AlmModel {
 public:
  explicit AlmModel(const ModelConfig& config);
  AlmModel(const AlmModel&) = delete;
  AlmModel& operator=(const AlmModel&) = delete;

  const ModelConfig& config() const { return config_; }
  nn::ParamStore& store() { return store_; }
  const nn::ParamStore& store() const { return store_; }
  const encoders::AudioEncoder& audio() const { return audio_; }
  const encoders::TextEncoder& text() const { return text_; }
  const encoders::RepresentationTransform& transform() const { return transform_; }
  const lm::ToyLM& lm() const { return lm_; }

  /// Windowed dense features of a clip after RoPE and the transform layers.
  Tensor audio_tokens(const encoders::SegmentedClip& clip, ops::AttentionCounter* counter = nullptr) const;

 private:
  ModelConfig config_;
  nn::ParamStore store_;
  encoders::AudioEncoder audio_;
  encoders::TextEncoder text_;
  encoders::RepresentationTransform transform_;
  lm::ToyLM lm_;
};

/// FNV-1a over the raw bytes of every parameter in `component`.
std::uint64_t component_hash(const nn::ParamStore& store, nn::Component component);

}  // namespace afd
