#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "afd/datapipe.hpp"
#include "afd/encoders.hpp"

namespace afd::synth {

struct DatasetSpec {
  std::string name;
  double share = 1.0;  // fraction of items
  double min_duration_s = 1.0;
  double max_duration_s = 30.0;
};

struct CorpusConfig {
  std::size_t items = 512;
  std::size_t concepts = 16;
  std::uint64_t seed = 0;
  std::vector<DatasetSpec> datasets = {
      {"pretrain", 0.5, 2.0, 30.0}, {"finetune", 0.35, 5.0, 90.0}, {"long", 0.15, 60.0, 300.0}};
  std::size_t positives_per_item = 2;
  std::size_t negatives_per_item = 2;
  double frame_rate = 10.0;  // num_tokens = frames at this rate
};

/// Names for concept ids; ids past the built-in list get "concept N".
std::string concept_name(std::size_t concept_id);

/// Seeded corpus: every item carries a concept id, a caption naming the
/// concept, paraphrase positives and negatives naming other concepts.
/// Durations are log-uniform within each dataset's range.
std::vector<data::ManifestItem> make_corpus(const CorpusConfig& config);

/// Frame features for a manifest item, or an error if it has no concept id.
encoders::AudioClip clip_for(const data::ManifestItem& item, const encoders::EncoderConfig& config);

/// Log-normal token counts (the padding benchmark corpus).
std::vector<std::size_t> lognormal_lengths(std::size_t n, std::uint64_t seed, double mu = 5.0, double sigma = 1.0,
                                           std::size_t max_len = 30000);

}  // namespace afd::synth
