#include "afd/encoders.hpp"

#include <algorithm>
#include <cmath>

#include "afd/rng.hpp"

namespace afd::encoders {

namespace {

constexpr std::uint64_t kMixtureSeed = 0x5EEDC0DEULL;
constexpr std::size_t kMixtureComponents = 3;
constexpr double kMixtureNoise = 0.6;

// Token k of a window averages frames [floor(k*F/t), floor((k+1)*F/t)), never empty.
std::pair<std::size_t, std::size_t> token_span(std::size_t k, std::size_t frames, std::size_t tokens) {
  const std::size_t b = k * frames / tokens;
  const std::size_t e = std::max(b + 1, (k + 1) * frames / tokens);
  return {b, std::min(e, frames)};
}

}  // namespace

std::size_t EncoderConfig::window_frames() const {
  return static_cast<std::size_t>(std::llround(window_seconds * frame_rate));
}

void EncoderConfig::validate() const {
  if (feature_dim == 0 || model_dim == 0 || head_dim == 0 || tokens_per_window == 0)
    throw Error("encoder config: widths and token count must be positive");
  if (!(window_seconds > 0.0) || !(frame_rate > 0.0)) throw Error("encoder config: window and frame rate must be positive");
  if (window_frames() == 0) throw Error("encoder config: a window holds no frames");
  if (model_dim % 2 != 0) throw ShapeError("encoder config: RoPE needs an even model width, got " + std::to_string(model_dim));
  if (encoder_heads == 0 || model_dim % encoder_heads != 0)
    throw ShapeError("encoder config: model width not divisible by encoder heads");
  if (transform_layers > 0 && (transform_heads == 0 || model_dim % transform_heads != 0))
    throw ShapeError("encoder config: model width not divisible by transform heads");
  if (!(rope_base > 1.0)) throw Error("encoder config: rope base must exceed 1");
}

void AudioClip::validate() const {
  if (!frames.defined() || frames.rank() != 2 || frames.rows() == 0)
    throw Error("audio clip '" + id + "': no frames");
  if (!(duration_s > 0.0)) throw Error("audio clip '" + id + "': duration must be positive");
  const double expected = duration_s * frame_rate;
  if (std::abs(expected - static_cast<double>(frames.rows())) > 1.0)
    throw Error("audio clip '" + id + "': " + std::to_string(frames.rows()) + " frames disagree with duration " +
                std::to_string(duration_s) + " s");
}

AudioClip synthesize_clip(std::string id, std::int64_t concept_id, std::uint64_t feature_seed, double duration_s,
                          const EncoderConfig& config) {
  if (!(duration_s > 0.0)) throw Error("synthesize_clip: duration must be positive");
  const std::size_t d = config.feature_dim;
  const auto frames = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(duration_s * config.frame_rate)));

  Rng means_rng(derive_seed(kMixtureSeed, static_cast<std::uint64_t>(concept_id)));
  std::vector<double> means(kMixtureComponents * d);
  for (auto& m : means) m = means_rng.normal();

  Rng rng(feature_seed);
  std::vector<double> values(frames * d);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t c = rng.below(kMixtureComponents);
    for (std::size_t j = 0; j < d; ++j) values[f * d + j] = means[c * d + j] + kMixtureNoise * rng.normal();
  }
  AudioClip clip;
  clip.id = std::move(id);
  clip.frames = Tensor::from({frames, d}, std::move(values));
  clip.duration_s = duration_s;
  clip.frame_rate = config.frame_rate;
  return clip;
}

std::size_t window_count(double duration_s, double window_seconds, std::size_t max_windows) {
  if (!(duration_s > 0.0)) throw Error("window_count: duration must be positive");
  if (!(window_seconds > 0.0)) throw Error("window_count: window length must be positive");
  if (max_windows == 0) throw Error("window_count: max_windows must be at least 1");
  // Tolerate float noise such as 30.000000001 s.
  const double ratio = duration_s / window_seconds;
  const auto n = static_cast<std::size_t>(std::ceil(ratio - 1e-9));
  return std::clamp<std::size_t>(n, 1, max_windows);
}

double SegmentedClip::last_pad_fraction() const {
  if (windows.empty() || window_frames == 0) return 0.0;
  return static_cast<double>(window_frames - valid_frames_last) / static_cast<double>(window_frames);
}

SegmentedClip segment_windows(const AudioClip& clip, const EncoderConfig& config, std::size_t max_windows) {
  clip.validate();
  if (clip.frames.cols() != config.feature_dim)
    throw ShapeError("segment_windows: clip '" + clip.id + "' has feature width " + std::to_string(clip.frames.cols()) +
                     ", encoder expects " + std::to_string(config.feature_dim));
  const std::size_t wf = config.window_frames();
  const std::size_t total = clip.frames.rows();
  const std::size_t n = std::min(window_count(static_cast<double>(total) / config.frame_rate, config.window_seconds,
                                              max_windows),
                                 (total + wf - 1) / wf);
  const std::size_t d = config.feature_dim;
  const auto src = clip.frames.values();

  SegmentedClip out;
  out.window_frames = wf;
  for (std::size_t w = 0; w < n; ++w) {
    const std::size_t begin = w * wf;
    const std::size_t valid = std::min(wf, total - begin);
    std::vector<double> values(wf * d, 0.0);
    std::copy(src.begin() + static_cast<std::ptrdiff_t>(begin * d),
              src.begin() + static_cast<std::ptrdiff_t>((begin + valid) * d), values.begin());
    out.windows.push_back(Tensor::from({wf, d}, std::move(values)));
    out.valid_frames_last = valid;
  }
  return out;
}

ExtractionMode parse_extraction_mode(std::string_view name) {
  if (name == "dense") return ExtractionMode::dense;
  if (name == "head") return ExtractionMode::head;
  throw Error("unknown extraction mode '" + std::string(name) + "' (expected dense or head)");
}

AudioEncoder::AudioEncoder(nn::ParamStore& store, const EncoderConfig& config) : config_(config) {
  config_.validate();
  const auto c = nn::Component::clap_encoder;
  const std::size_t d = config_.model_dim;
  patch_ = nn::Linear(store, "clap.audio.patch", c, config_.feature_dim, d);
  for (std::size_t i = 0; i < config_.encoder_layers; ++i)
    layers_.emplace_back(store, "clap.audio.layer" + std::to_string(i), c, d, config_.encoder_heads,
                         config_.encoder_inner, false);
  head_hidden_ = nn::Linear(store, "clap.audio.head.hidden", c, d, d);
  head_out_ = nn::Linear(store, "clap.audio.head.out", c, d, config_.head_dim);
}

Tensor AudioEncoder::pool_frames(const Tensor& window) const {
  const std::size_t frames = window.rows(), t = config_.tokens_per_window;
  std::vector<double> pool(t * frames, 0.0);
  for (std::size_t k = 0; k < t; ++k) {
    const auto [b, e] = token_span(k, frames, t);
    for (std::size_t f = b; f < e; ++f) pool[k * frames + f] = 1.0 / static_cast<double>(e - b);
  }
  return ops::matmul(Tensor::from({t, frames}, std::move(pool)), window);
}

Tensor AudioEncoder::head_of(const Tensor& dense) const {
  const Tensor pooled = ops::reshape(ops::mean(dense, 0), {1, config_.model_dim});
  return head_out_(ops::gelu(head_hidden_(pooled)));
}

Tensor AudioEncoder::encode_window(const Tensor& window, ExtractionMode mode, ops::AttentionCounter* counter) const {
  if (!window.defined() || window.rank() != 2 || window.cols() != config_.feature_dim || window.rows() == 0)
    throw ShapeError("audio encoder: window " + (window.defined() ? shape_str(window.shape()) : std::string("<none>")) +
                     " does not match feature width " + std::to_string(config_.feature_dim));
  Tensor x = patch_(pool_frames(window));
  for (const auto& layer : layers_) x = layer(x, counter);
  if (mode == ExtractionMode::dense) return x;
  return head_of(x);
}

WindowedAudioTokens AudioEncoder::dense_tokens(const SegmentedClip& clip, ops::AttentionCounter* counter) const {
  if (clip.windows.empty()) throw Error("audio encoder: clip has no windows");
  const std::size_t t = config_.tokens_per_window;
  WindowedAudioTokens out;
  std::vector<Tensor> grids;
  for (const auto& w : clip.windows) grids.push_back(encode_window(w, ExtractionMode::dense, counter));
  out.tokens = grids.size() == 1 ? grids.front() : ops::concat(grids, 0);
  out.window_count = clip.count();
  out.tokens_per_window = t;
  out.positions.resize(out.window_count * t);
  for (std::size_t i = 0; i < out.positions.size(); ++i) out.positions[i] = i;
  out.pad_mask.assign(out.positions.size(), false);
  const std::size_t last = (out.window_count - 1) * t;
  for (std::size_t k = 0; k < t; ++k)
    out.pad_mask[last + k] = token_span(k, clip.window_frames, t).first >= clip.valid_frames_last;
  return out;
}

Tensor AudioEncoder::clap_embedding(const SegmentedClip& clip) const {
  if (clip.windows.empty()) throw Error("audio encoder: clip has no windows");
  std::vector<Tensor> heads;
  for (const auto& w : clip.windows) heads.push_back(encode_window(w, ExtractionMode::head));
  const Tensor stacked = heads.size() == 1 ? heads.front() : ops::concat(heads, 0);
  const Tensor avg = ops::reshape(ops::mean(stacked, 0), {1, config_.head_dim});
  return ops::l2_normalize(avg, 1);
}

Tensor apply_rope(const Tensor& tokens, std::span<const std::size_t> positions, double base) {
  if (!tokens.defined() || tokens.rank() != 2) throw ShapeError("rope: expected a 2-D token grid");
  const std::size_t rows = tokens.rows(), d = tokens.cols();
  if (d % 2 != 0) throw ShapeError("rope: odd embedding width " + std::to_string(d));
  if (positions.size() != rows)
    throw ShapeError("rope: " + std::to_string(positions.size()) + " positions for " + std::to_string(rows) + " rows");
  if (!(base > 1.0)) throw Error("rope: base must exceed 1");

  const std::size_t half = d / 2;
  std::vector<double> cos_t(rows * half), sin_t(rows * half);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < half; ++k) {
      const double theta =
          static_cast<double>(positions[r]) * std::pow(base, -2.0 * static_cast<double>(k) / static_cast<double>(d));
      cos_t[r * half + k] = std::cos(theta);
      sin_t[r * half + k] = std::sin(theta);
    }

  const auto x = tokens.values();
  std::vector<double> y(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < half; ++k) {
      const double c = cos_t[r * half + k], s = sin_t[r * half + k];
      const double a = x[r * d + 2 * k], b = x[r * d + 2 * k + 1];
      y[r * d + 2 * k] = a * c - b * s;
      y[r * d + 2 * k + 1] = a * s + b * c;
    }

  return make_op("rope", tokens.shape(), std::move(y), {tokens},
                 [rows, d, half, cos_t = std::move(cos_t), sin_t = std::move(sin_t)](detail::Node& n) {
                   auto& parent = n.parents[0];
                   if (!parent->requires_grad) return;
                   auto& g = parent->ensure_grad();
                   for (std::size_t r = 0; r < rows; ++r)
                     for (std::size_t k = 0; k < half; ++k) {
                       const double c = cos_t[r * half + k], s = sin_t[r * half + k];
                       const double ga = n.grad[r * d + 2 * k], gb = n.grad[r * d + 2 * k + 1];
                       g[r * d + 2 * k] += ga * c + gb * s;
                       g[r * d + 2 * k + 1] += -ga * s + gb * c;
                     }
                 });
}

Tensor apply_rope(const Tensor& tokens, double base) {
  std::vector<std::size_t> pos(tokens.defined() ? tokens.rows() : 0);
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
  return apply_rope(tokens, pos, base);
}

RepresentationTransform::RepresentationTransform(nn::ParamStore& store, const EncoderConfig& config) : config_(config) {
  config_.validate();
  for (std::size_t i = 0; i < config_.transform_layers; ++i)
    layers_.emplace_back(store, "transform.layer" + std::to_string(i), nn::Component::transform_xattn,
                         config_.model_dim, config_.transform_heads, config_.transform_inner, false);
}

Tensor RepresentationTransform::operator()(const WindowedAudioTokens& audio, ops::AttentionCounter* counter) const {
  if (!audio.tokens.defined() || audio.tokens.cols() != config_.model_dim)
    throw ShapeError("representation transform: token width does not match model width " +
                     std::to_string(config_.model_dim));
  Tensor x = audio.tokens;
  nn::QkTransform qk;
  if (config_.use_rope) {
    if (config_.rope_per_layer) {
      qk = [&](const Tensor& t) { return apply_rope(t, audio.positions, config_.rope_base); };
    } else {
      x = apply_rope(x, audio.positions, config_.rope_base);
    }
  }
  for (const auto& layer : layers_) x = layer(x, counter, qk);
  return x;
}

std::vector<std::size_t> byte_tokens(std::string_view text) {
  std::vector<std::size_t> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(c);
  return ids;
}

TextEncoder::TextEncoder(nn::ParamStore& store, const EncoderConfig& config) : config_(config) {
  config_.validate();
  const auto c = nn::Component::clap_encoder;
  embedding_ = store.add("clap.text.embedding", c, {config_.text_vocab, config_.model_dim}, nn::Init::normal_fan_in,
                         std::sqrt(static_cast<double>(config_.text_vocab)));
  hidden_ = nn::Linear(store, "clap.text.hidden", c, config_.model_dim, config_.model_dim);
  out_ = nn::Linear(store, "clap.text.out", c, config_.model_dim, config_.head_dim);
}

Tensor TextEncoder::encode_tokens(std::span<const std::size_t> tokens) const {
  if (tokens.empty()) throw Error("text encoder: empty token list");
  for (std::size_t id : tokens)
    if (id >= config_.text_vocab)
      throw Error("text encoder: token " + std::to_string(id) + " outside vocabulary of " +
                  std::to_string(config_.text_vocab));
  const Tensor pooled = ops::reshape(ops::mean(ops::gather_rows(embedding_, tokens), 0), {1, config_.model_dim});
  return ops::l2_normalize(out_(ops::gelu(hidden_(pooled))), 1);
}

}  // namespace afd::encoders
