#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "afd/ops.hpp"
#include "afd/tensor.hpp"

namespace afd::nn {

/// Trainable groups a curriculum stage can freeze independently.
enum class Component { clap_encoder, transform_xattn, lm };

std::string_view component_name(Component c);
Component component_from_name(std::string_view name);

struct Param {
  std::string name;
  Component component;
  Tensor value;
};

enum class Init { normal_fan_in, zeros, ones };

/// Named parameters in registration order. Initial values depend only on the
/// store seed and the parameter name, never on registration order.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : seed_(seed) {}
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Tensor add(const std::string& name, Component component, Shape shape, Init init = Init::normal_fan_in,
             double gain = 1.0);

  const std::vector<Param>& params() const { return params_; }
  const Param& at(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::size_t total_values() const;
  std::uint64_t seed() const { return seed_; }
  void zero_grad();

 private:
  std::uint64_t seed_;
  std::vector<Param> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // out

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, Component c, std::size_t in, std::size_t out,
         Init init = Init::normal_fan_in);
  Tensor operator()(const Tensor& x) const { return ops::add_bias(ops::matmul(x, weight), bias); }
};

/// Row-wise layer norm with learned gain and bias.
struct LayerNorm {
  Tensor gain;
  Tensor bias;

  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, Component c, std::size_t dim);
  Tensor operator()(const Tensor& x) const {
    return ops::add_bias(ops::mul_columns(ops::layer_norm(x, 1, 1e-5), gain), bias);
  }
};

/// Two-layer GELU feed-forward.
struct FeedForward {
  Linear up, down;

  FeedForward() = default;
  FeedForward(ParamStore& store, const std::string& name, Component c, std::size_t dim, std::size_t inner);
  Tensor operator()(const Tensor& x) const { return down(ops::gelu(up(x))); }
};

/// Optional transform applied to queries and keys inside attention (RoPE).
using QkTransform = std::function<Tensor(const Tensor&)>;

/// Pre-norm transformer block: x + Attn(LN(x)), then + FFW(LN(.)).
struct TransformerBlock {
  LayerNorm norm_attn, norm_ff;
  Linear q, k, v, o;
  FeedForward ff;
  std::size_t heads = 1;
  bool causal = false;

  TransformerBlock() = default;
  TransformerBlock(ParamStore& store, const std::string& name, Component c, std::size_t dim, std::size_t heads,
                   std::size_t inner, bool causal);
  Tensor operator()(const Tensor& x, ops::AttentionCounter* counter = nullptr,
                    const QkTransform& qk_transform = nullptr) const;
};

}  // namespace afd::nn
