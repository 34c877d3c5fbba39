#include <cmath>
#include <functional>
#include <string>

#include "afd/gradcheck.hpp"
#include "afd/ops.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace afd;
using afd::test::random_tensor;

TEST_CASE("matmul with identity returns the input") {
  auto a = Tensor::matrix({{1, 2}, {3, 4}});
  auto eye = Tensor::matrix({{1, 0}, {0, 1}});
  auto c = ops::matmul(a, eye);
  CHECK(c.shape() == Shape{2, 2});
  CHECK(test::to_vec(c.values()) == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("softmax of equal logits is uniform") {
  auto y = ops::softmax(Tensor::vector({0, 0, 0}), 0);
  for (double v : y.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("l2_normalize of a 3-4-5 vector") {
  auto y = ops::l2_normalize(Tensor::vector({3, 4}), 0);
  CHECK(y.at(0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(y.at(1) == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("l2_normalize of a zero vector stays zero and warns") {
  const auto before = warning_count();
  set_warning_sink([](std::string_view) {});
  auto x = Tensor::zeros({3}, true);
  auto y = ops::l2_normalize(x, 0);
  set_warning_sink(nullptr);
  CHECK(warning_count() == before + 1);
  for (double v : y.values()) CHECK(v == 0.0);
  backward(ops::sum(y));
  for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("backward of sum of squares") {
  auto x = Tensor::vector({1, 2, 3}, true);
  backward(ops::sum(ops::mul(x, x)));
  CHECK(test::to_vec(x.grad()) == std::vector<double>{2, 4, 6});
}

TEST_CASE("backward of log(exp(x)) is one") {
  auto x = Tensor::scalar(5.0, true);
  backward(ops::log(ops::exp(x)));
  CHECK(x.grad()[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("repeated backward accumulates into leaves") {
  auto x = Tensor::vector({1, 2, 3}, true);
  auto loss = ops::sum(ops::mul(x, x));
  backward(loss);
  backward(loss);
  CHECK(test::to_vec(x.grad()) == std::vector<double>{4, 8, 12});
  x.zero_grad();
  backward(loss);
  CHECK(test::to_vec(x.grad()) == std::vector<double>{2, 4, 6});
}

TEST_CASE("backward rejects a non-scalar loss") {
  auto x = Tensor::vector({1, 2}, true);
  CHECK_THROWS_AS(backward(ops::scale(x, 2.0)), ShapeError);
}

TEST_CASE("shape mismatch names the op and shapes") {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({2, 3});
  try {
    (void)ops::matmul(a, b);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
  }
  CHECK_THROWS_AS((void)ops::add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
}

TEST_CASE("non-finite input is rejected") {
  auto a = Tensor::vector({1.0, std::nan("")});
  CHECK_THROWS_AS((void)ops::exp(a), NonFiniteError);
  CHECK_THROWS_AS((void)ops::log(Tensor::vector({0.0})), NonFiniteError);
}

TEST_CASE("ops on constants record nothing on the tape") {
  auto a = Tensor::vector({1, 2});
  auto y = ops::exp(a);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
  auto b = Tensor::vector({1, 2}, true);
  auto z = ops::add(ops::exp(b), ops::mul(b, b));
  CHECK(z.requires_grad());
  // z, exp, mul, b: the shared leaf appears once.
  CHECK(tape_order(z).size() == 4);
}

TEST_CASE("finite_diff_grad basics") {
  auto x = Tensor::vector({0.3, -1.2, 2.0, 4.5});
  auto g = finite_diff_grad([](const Tensor& t) { return ops::sum(t).item(); }, x);
  for (double v : g.values()) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));

  auto s = Tensor::scalar(3.0);
  auto gs = finite_diff_grad([](const Tensor& t) { return t.item() * t.item(); }, s, 1e-5);
  CHECK(std::abs(gs.item() - 6.0) <= 1e-8);
}

TEST_CASE("finite_diff_grad rejects non-deterministic functions") {
  int calls = 0;
  auto f = [&calls](const Tensor& t) { return t.item() + static_cast<double>(calls++); };
  CHECK_THROWS_AS(finite_diff_grad(f, Tensor::scalar(1.0)), Error);
  CHECK_THROWS_AS(finite_diff_grad([](const Tensor& t) { return t.item(); }, Tensor::scalar(1.0), 0.0), Error);
}

namespace {

using LossBuilder = std::function<Tensor(const std::vector<Tensor>&)>;

// Tape gradient of every input vs central differences.
void expect_gradients_match(const LossBuilder& build, std::vector<Tensor> inputs, double tol = 1e-4) {
  std::vector<std::pair<std::string, Tensor>> named;
  for (std::size_t i = 0; i < inputs.size(); ++i) named.emplace_back("in" + std::to_string(i), inputs[i]);
  auto results = check_gradients([&] { return build(inputs); }, named, 1e-5, tol);
  for (const auto& r : results) {
    INFO(r.name << " rel err " << r.rel_error);
    CHECK(r.passed);
  }
}

}  // namespace

TEST_CASE("every differentiable op matches finite differences") {
  Rng rng(7);
  for (int trial = 0; trial < 3; ++trial) {
    const std::size_t r = 2 + rng.below(5), c = 2 + rng.below(6), k = 2 + rng.below(5);
    auto A = random_tensor(rng, {r, c});
    auto B = random_tensor(rng, {c, k});
    auto C = random_tensor(rng, {r, c});
    auto w = random_tensor(rng, {r, k});
    auto bias = random_tensor(rng, {c});
    auto s = random_tensor(rng, {1});
    // Contract each output with a random weight so every element matters.
    auto contract = [](const Tensor& y, const Tensor& wt) { return ops::sum(ops::mul(y, wt)); };
    auto wrc = random_tensor(rng, {r, c}, false);

    SUBCASE("matmul") { expect_gradients_match([&](auto& in) { return contract(ops::matmul(in[0], in[1]), w); }, {A, B}); }
    SUBCASE("add/sub/mul/scale") {
      expect_gradients_match(
          [&](auto& in) {
            auto y = ops::mul(ops::add(in[0], in[1]), ops::sub(in[0], ops::scale(in[1], 0.3)));
            return contract(ops::add_scalar(y, 0.5), wrc);
          },
          {A, C});
    }
    SUBCASE("scalar broadcast") { expect_gradients_match([&](auto& in) { return contract(ops::mul(in[1], in[0]), wrc); }, {A, s}); }
    SUBCASE("exp/log/tanh/gelu") {
      expect_gradients_match(
          [&](auto& in) {
            auto pos = ops::add_scalar(ops::exp(ops::scale(in[0], 0.5)), 0.1);
            return contract(ops::add(ops::log(pos), ops::add(ops::tanh(in[0]), ops::gelu(in[0]))), wrc);
          },
          {A});
    }
    SUBCASE("softmax/log_softmax/logsumexp") {
      expect_gradients_match(
          [&](auto& in) {
            auto a = contract(ops::softmax(in[0], 1), wrc);
            auto b = contract(ops::log_softmax(in[0], 0), wrc);
            auto l = ops::sum(ops::mul(ops::logsumexp(in[0], 1), ops::reshape(ops::slice(ops::transpose(wrc), 0, 0, 1), {r})));
            return ops::add(ops::add(a, b), ops::add(l, ops::logsumexp(in[0])));
          },
          {A});
    }
    SUBCASE("layer_norm/l2_normalize") {
      expect_gradients_match(
          [&](auto& in) {
            return ops::add(contract(ops::layer_norm(in[0], 1, 1e-5), wrc), contract(ops::l2_normalize(in[0], 0), wrc));
          },
          {A});
    }
    SUBCASE("concat/slice/transpose/reshape") {
      expect_gradients_match(
          [&](auto& in) {
            auto cat = ops::concat({in[0], in[1]}, 0);
            auto sl = ops::slice(cat, 0, 1, 2 * r - 1);
            auto t = ops::transpose(ops::reshape(sl, {2 * r - 2, c}));
            return ops::sum(ops::mul(t, t));
          },
          {A, C});
    }
    SUBCASE("sum/mean over axes") {
      expect_gradients_match(
          [&](auto& in) {
            auto a = ops::sum(ops::mul(ops::sum(in[0], 0), ops::mean(in[0], 0)));
            return ops::add(a, ops::mul(ops::mean(in[0]), ops::sum(ops::mean(in[0], 1))));
          },
          {A});
    }
    SUBCASE("add_bias/mul_columns/gather/pick/cross_entropy") {
      std::vector<std::size_t> ids{0, r - 1, 1};
      std::vector<std::size_t> cols(r);
      for (std::size_t i = 0; i < r; ++i) cols[i] = (i * 3) % c;
      expect_gradients_match(
          [&](auto& in) {
            auto y = ops::mul_columns(ops::add_bias(in[0], in[1]), in[1]);
            auto g = ops::sum(ops::mul(ops::gather_rows(y, ids), ops::gather_rows(in[0], ids)));
            auto p = ops::sum(ops::pick(y, cols));
            return ops::add(ops::add(g, p), ops::cross_entropy(y, cols));
          },
          {A, bias});
    }
    SUBCASE("attention") {
      const std::size_t l1 = 2 + rng.below(4), l2 = 2 + rng.below(5), d = 4;
      auto q = random_tensor(rng, {l1, d});
      auto kk = random_tensor(rng, {l2, d});
      auto v = random_tensor(rng, {l2, d});
      auto wo = random_tensor(rng, {l1, d}, false);
      for (bool causal : {false, true}) {
        ops::AttentionOptions opts{2, causal, false, nullptr};
        expect_gradients_match([&](auto& in) { return contract(ops::attention(in[0], in[1], in[2], opts), wo); }, {q, kk, v});
      }
    }
  }
}

TEST_CASE("fused attention equals attention composed from primitive ops") {
  Rng rng(3);
  const std::size_t l1 = 5, l2 = 7, d = 8, heads = 2, dh = d / heads;
  auto q = random_tensor(rng, {l1, d}, false);
  auto k = random_tensor(rng, {l2, d}, false);
  auto v = random_tensor(rng, {l2, d}, false);
  auto fused = ops::attention(q, k, v, {heads, false, false, nullptr});
  std::vector<Tensor> per_head;
  for (std::size_t h = 0; h < heads; ++h) {
    auto qh = ops::slice(q, 1, h * dh, (h + 1) * dh);
    auto kh = ops::slice(k, 1, h * dh, (h + 1) * dh);
    auto vh = ops::slice(v, 1, h * dh, (h + 1) * dh);
    auto scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    per_head.push_back(ops::matmul(ops::softmax(scores, 1), vh));
  }
  auto composed = ops::concat(per_head, 1);
  CHECK(test::max_abs_diff(fused.values(), composed.values()) < 1e-13);
}

TEST_CASE("softmax rows sum to one and l2_normalize gives unit norm") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t r = 1 + rng.below(16), c = 1 + rng.below(16);
    auto x = random_tensor(rng, {r, c}, false, 5.0);
    auto y = ops::softmax(x, 1);
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        const double p = y.at(i, j);
        CHECK(p > 0.0);
        CHECK(p < 1.0 + (c == 1 ? 1e-15 : 0.0));
        s += p;
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
    auto n = ops::l2_normalize(x, 1);
    for (std::size_t i = 0; i < r; ++i) {
      double ss = 0.0;
      for (std::size_t j = 0; j < c; ++j) ss += n.at(i, j) * n.at(i, j);
      CHECK(std::abs(std::sqrt(ss) - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("identical inputs give bit-identical outputs") {
  Rng r1(5), r2(5);
  auto a = random_tensor(r1, {6, 9}, false);
  auto b = random_tensor(r2, {6, 9}, false);
  auto f = [](const Tensor& x) {
    return ops::layer_norm(ops::gelu(ops::matmul(x, ops::transpose(x))), 1, 1e-5);
  };
  CHECK(test::to_vec(f(a).values()) == test::to_vec(f(b).values()));
}
