#include "afd/gradsuite.hpp"

#include <cmath>

#include "afd/afclap.hpp"
#include "afd/ops.hpp"
#include "afd/rng.hpp"
#include "afd/xattn_lm.hpp"

namespace afd {

namespace {

Tensor random_leaf(Rng& rng, Shape shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return Tensor::from(std::move(shape), std::move(v), true);
}

GradSuiteCase finish(std::string name, std::vector<GradCheckResult> results) {
  GradSuiteCase c{std::move(name), std::move(results), true};
  for (const auto& r : c.results) c.passed = c.passed && r.passed;
  return c;
}

}  // namespace

std::vector<GradSuiteCase> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<GradSuiteCase> out;
  Rng rng(seed);

  {
    const std::size_t B = 2, M = 2, N = 3, d = 8;
    auto audio = random_leaf(rng, {B, d});
    auto pos = random_leaf(rng, {B * M, d});
    auto neg = random_leaf(rng, {B * M * N, d});
    auto log_inv_tau = Tensor::scalar(std::log(1.0 / (0.1 + 0.4 * rng.uniform())), true);
    out.push_back(finish(
        "contrastive_loss",
        check_gradients(
            [&] { return afclap::contrastive_loss(afclap::make_batch(audio, pos, neg, M, N), log_inv_tau); },
            {{"audio", audio}, {"positives", pos}, {"negatives", neg}, {"log_inv_tau", log_inv_tau}})));
  }

  {
    auto q = random_leaf(rng, {5, 8});
    auto k = random_leaf(rng, {7, 8});
    auto v = random_leaf(rng, {7, 8});
    auto w = random_leaf(rng, {5, 8});
    ops::AttentionOptions opts;
    opts.heads = 2;
    out.push_back(finish("attention", check_gradients([&] { return ops::sum(ops::mul(ops::attention(q, k, v, opts), w)); },
                                                      {{"q", q}, {"k", k}, {"v", v}})));
  }

  {
    lm::LmConfig c;
    c.vocab = 16;
    c.layers = 2;
    c.dim = 8;
    c.heads = 2;
    c.inner = 12;
    c.max_len = 16;
    c.audio_dim = 6;
    c.xattn_heads = 2;
    nn::ParamStore store(seed);
    lm::ToyLM model(store, c);
    // Gates start at zero, which would hide every gradient behind them.
    for (const auto& b : model.xattn_blocks()) {
      Tensor ga = b.gate_attn, gd = b.gate_dense;
      ga.mutable_values()[0] = rng.uniform(-0.8, 0.8);
      gd.mutable_values()[0] = rng.uniform(-0.8, 0.8);
    }
    std::vector<std::size_t> tokens(6);
    for (auto& t : tokens) t = rng.below(c.vocab);
    auto audio = random_leaf(rng, {4, c.audio_dim});
    std::vector<std::pair<std::string, Tensor>> named{{"audio", audio}};
    for (const auto& p : store.params()) named.emplace_back(p.name, p.value);
    out.push_back(finish("lm_cross_entropy", check_gradients([&] { return model.next_token_loss(tokens, audio); }, named)));
  }
  return out;
}

}  // namespace afd
