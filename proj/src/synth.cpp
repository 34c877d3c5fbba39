#include "afd/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "afd/rng.hpp"

namespace afd::synth {

namespace {

constexpr std::array<const char*, 16> kConcepts = {
    "dog barking",   "rain falling",   "church bells",    "car engine",     "baby crying",   "birds chirping",
    "glass breaking", "door knocking", "thunder rumbling", "crowd applause", "siren wailing", "keyboard typing",
    "water flowing", "wind howling",   "footsteps",        "guitar strumming"};

constexpr std::array<const char*, 4> kCaption = {"the sound of {}", "a recording of {}", "{} can be heard",
                                                 "you can hear {} here"};

std::string fill(const char* tmpl, const std::string& name) {
  std::string s(tmpl);
  const auto at = s.find("{}");
  return s.replace(at, 2, name);
}

}  // namespace

std::string concept_name(std::size_t concept_id) {
  if (concept_id < kConcepts.size()) return kConcepts[concept_id];
  return "concept " + std::to_string(concept_id);
}

std::vector<data::ManifestItem> make_corpus(const CorpusConfig& config) {
  if (config.concepts < 2) throw Error("synthetic corpus: need at least two concepts");
  if (config.datasets.empty()) throw Error("synthetic corpus: no datasets");
  if (!(config.frame_rate > 0.0)) throw Error("synthetic corpus: frame rate must be positive");
  double share_total = 0.0;
  for (const auto& d : config.datasets) {
    if (!(d.share > 0.0) || !(d.min_duration_s > 0.0) || d.max_duration_s < d.min_duration_s)
      throw Error("synthetic corpus: bad dataset spec '" + d.name + "'");
    share_total += d.share;
  }

  // Largest-remainder split of items over datasets.
  std::vector<std::size_t> counts(config.datasets.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    counts[i] = static_cast<std::size_t>(std::floor(config.items * config.datasets[i].share / share_total));
    assigned += counts[i];
  }
  for (std::size_t i = 0; assigned < config.items; i = (i + 1) % counts.size(), ++assigned) ++counts[i];

  Rng rng(derive_seed(config.seed, "corpus"));
  std::vector<data::ManifestItem> items;
  items.reserve(config.items);
  for (std::size_t di = 0; di < config.datasets.size(); ++di) {
    const auto& spec = config.datasets[di];
    for (std::size_t k = 0; k < counts[di]; ++k) {
      const std::size_t c = (items.size() + rng.below(config.concepts)) % config.concepts;
      const std::string name = concept_name(c);
      data::ManifestItem m;
      m.id = spec.name + "-" + std::to_string(k);
      m.dataset = spec.name;
      const double lo = std::log(spec.min_duration_s), hi = std::log(spec.max_duration_s);
      m.duration_s = std::round(std::exp(rng.uniform(lo, hi)) * 10.0) / 10.0;
      m.duration_s = std::clamp(m.duration_s, spec.min_duration_s, spec.max_duration_s);
      m.num_tokens = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(m.duration_s * config.frame_rate)));
      m.text = fill(kCaption[rng.below(kCaption.size())], name);
      for (std::size_t p = 0; p < config.positives_per_item; ++p)
        m.positives.push_back(fill(kCaption[(p + 1 + rng.below(kCaption.size() - 1)) % kCaption.size()], name));
      for (std::size_t n = 0; n < config.negatives_per_item; ++n) {
        const std::size_t other = (c + 1 + rng.below(config.concepts - 1)) % config.concepts;
        m.negatives.push_back(fill(kCaption[rng.below(kCaption.size())], concept_name(other)));
      }
      m.label = name;
      m.concept_id = static_cast<std::int64_t>(c);
      m.feature_seed = static_cast<std::int64_t>(rng.next() >> 1);
      items.push_back(std::move(m));
    }
  }
  return items;
}

encoders::AudioClip clip_for(const data::ManifestItem& item, const encoders::EncoderConfig& config) {
  if (!item.concept_id)
    throw Error("item '" + item.id + "' has no concept_id; only synthetic items can be materialized");
  return encoders::synthesize_clip(item.id, *item.concept_id, static_cast<std::uint64_t>(item.feature_seed),
                                   item.duration_s, config);
}

std::vector<std::size_t> lognormal_lengths(std::size_t n, std::uint64_t seed, double mu, double sigma,
                                           std::size_t max_len) {
  Rng rng(seed);
  std::vector<std::size_t> out(n);
  for (auto& t : out) {
    const double x = std::exp(mu + sigma * rng.normal());
    t = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(x)), 1, max_len);
  }
  return out;
}

}  // namespace afd::synth
