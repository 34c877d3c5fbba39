#include "afd/nn.hpp"

#include <cmath>

#include "afd/rng.hpp"

namespace afd::nn {

std::string_view component_name(Component c) {
  switch (c) {
    case Component::clap_encoder:
      return "clap_encoder";
    case Component::transform_xattn:
      return "transform_xattn";
    case Component::lm:
      return "lm";
  }
  return "unknown";
}

Component component_from_name(std::string_view name) {
  if (name == "clap_encoder") return Component::clap_encoder;
  if (name == "transform_xattn") return Component::transform_xattn;
  if (name == "lm") return Component::lm;
  throw Error("unknown component '" + std::string(name) + "'");
}

Tensor ParamStore::add(const std::string& name, Component component, Shape shape, Init init, double gain) {
  if (index_.contains(name)) throw Error("param store: duplicate parameter '" + name + "'");
  const std::size_t n = shape_numel(shape);
  std::vector<double> values(n, 0.0);
  if (init == Init::ones) {
    std::fill(values.begin(), values.end(), 1.0);
  } else if (init == Init::normal_fan_in) {
    Rng rng(derive_seed(seed_, name));
    const double fan_in = static_cast<double>(shape.front());
    const double stddev = gain / std::sqrt(fan_in);
    for (auto& v : values) v = rng.normal() * stddev;
  }
  Tensor t = Tensor::from(std::move(shape), std::move(values), true);
  index_.emplace(name, params_.size());
  params_.push_back(Param{name, component, t});
  return t;
}

const Param& ParamStore::at(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("param store: no parameter named '" + std::string(name) + "'");
  return params_[it->second];
}

bool ParamStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ParamStore::total_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) {
    Tensor t = p.value;
    t.zero_grad();
  }
}

Linear::Linear(ParamStore& store, const std::string& name, Component c, std::size_t in, std::size_t out, Init init)
    : weight(store.add(name + ".weight", c, {in, out}, init)), bias(store.add(name + ".bias", c, {out}, Init::zeros)) {}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, Component c, std::size_t dim)
    : gain(store.add(name + ".gain", c, {dim}, Init::ones)), bias(store.add(name + ".bias", c, {dim}, Init::zeros)) {}

FeedForward::FeedForward(ParamStore& store, const std::string& name, Component c, std::size_t dim, std::size_t inner)
    : up(store, name + ".up", c, dim, inner), down(store, name + ".down", c, inner, dim) {}

TransformerBlock::TransformerBlock(ParamStore& store, const std::string& name, Component c, std::size_t dim,
                                   std::size_t n_heads, std::size_t inner, bool is_causal)
    : norm_attn(store, name + ".norm_attn", c, dim),
      norm_ff(store, name + ".norm_ff", c, dim),
      q(store, name + ".q", c, dim, dim),
      k(store, name + ".k", c, dim, dim),
      v(store, name + ".v", c, dim, dim),
      o(store, name + ".o", c, dim, dim),
      ff(store, name + ".ff", c, dim, inner),
      heads(n_heads),
      causal(is_causal) {
  if (n_heads == 0 || dim % n_heads != 0) {
    throw ShapeError("transformer block '" + name + "': width " + std::to_string(dim) + " not divisible by " +
                     std::to_string(n_heads) + " heads");
  }
}

Tensor TransformerBlock::operator()(const Tensor& x, ops::AttentionCounter* counter, const QkTransform& qk_transform) const {
  const Tensor h = norm_attn(x);
  Tensor qh = q(h), kh = k(h);
  if (qk_transform) {
    qh = qk_transform(qh);
    kh = qk_transform(kh);
  }
  const Tensor attn = ops::attention(qh, kh, v(h), {heads, causal, false, counter});
  const Tensor mid = ops::add(x, o(attn));
  return ops::add(mid, ff(norm_ff(mid)));
}

}  // namespace afd::nn
