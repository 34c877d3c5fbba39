#include <vector>

#include "afd/kernels.hpp"
#include "afd/rng.hpp"
#include "doctest.h"

using namespace afd;

namespace {

std::vector<double> randn(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

struct ThreadScope {
  explicit ThreadScope(int n) : saved(kernels::max_threads()) { kernels::set_num_threads(n); }
  ~ThreadScope() { kernels::set_num_threads(saved); }
  int saved;
};

}  // namespace

TEST_CASE("parallel matmul variants are bit-identical to the serial reference") {
  ThreadScope threads(4);
  Rng rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    const kernels::MatDims d{1 + rng.below(40), 1 + rng.below(40), 1 + rng.below(40)};
    auto a = randn(rng, d.m * d.k);
    auto b = randn(rng, d.k * d.n);
    std::vector<double> s(d.m * d.n), p(d.m * d.n);
    kernels::matmul_serial(a, b, s, d);
    kernels::matmul_parallel(a, b, p, d);
    CHECK(s == p);

    auto bt = randn(rng, d.n * d.k);
    kernels::matmul_nt_serial(a, bt, s, d);
    kernels::matmul_nt_parallel(a, bt, p, d);
    CHECK(s == p);

    auto at = randn(rng, d.k * d.m);
    kernels::matmul_tn_serial(at, b, s, d);
    kernels::matmul_tn_parallel(at, b, p, d);
    CHECK(s == p);
  }
}

TEST_CASE("matmul reference on a small case") {
  std::vector<double> a{1, 2, 3, 4, 5, 6};  // 2x3
  std::vector<double> b{7, 8, 9, 10, 11, 12};  // 3x2
  std::vector<double> c(4);
  kernels::matmul_serial(a, b, c, {2, 3, 2});
  CHECK(c == std::vector<double>{58, 64, 139, 154});
  // a * b^T with b^T stored as 2x3
  std::vector<double> bt{7, 9, 11, 8, 10, 12};
  kernels::matmul_nt_serial(a, bt, c, {2, 3, 2});
  CHECK(c == std::vector<double>{58, 64, 139, 154});
}

TEST_CASE("parallel attention is bit-identical to the serial reference") {
  ThreadScope threads(4);
  Rng rng(202);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t heads = 1 + rng.below(4);
    const kernels::AttnDims dims{1 + rng.below(20), 1 + rng.below(20), heads * (1 + rng.below(6)), heads, trial % 2 == 0};
    auto q = randn(rng, dims.l1 * dims.d);
    auto k = randn(rng, dims.l2 * dims.d);
    auto v = randn(rng, dims.l2 * dims.d);
    const std::size_t np = dims.heads * dims.l1 * dims.l2;
    std::vector<double> ps(np), pp(np), os(dims.l1 * dims.d), op(dims.l1 * dims.d);
    kernels::attention_forward_serial(q, k, v, ps, os, dims);
    kernels::attention_forward_parallel(q, k, v, pp, op, dims);
    CHECK(ps == pp);
    CHECK(os == op);

    auto g = randn(rng, dims.l1 * dims.d);
    std::vector<double> dqs(q.size()), dks(k.size()), dvs(v.size());
    std::vector<double> dqp(q.size()), dkp(k.size()), dvp(v.size());
    kernels::attention_backward_serial(q, k, v, ps, g, dqs, dks, dvs, dims);
    kernels::attention_backward_parallel(q, k, v, ps, g, dqp, dkp, dvp, dims);
    CHECK(dqs == dqp);
    CHECK(dks == dkp);
    CHECK(dvs == dvp);
  }
}

TEST_CASE("causal attention puts zero weight on future keys") {
  Rng rng(9);
  const kernels::AttnDims dims{6, 6, 4, 2, true};
  auto q = randn(rng, 24), k = randn(rng, 24), v = randn(rng, 24);
  std::vector<double> probs(2 * 36), out(24);
  kernels::attention_forward_serial(q, k, v, probs, out, dims);
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = i + 1; j < 6; ++j) CHECK(probs[(h * 6 + i) * 6 + j] == 0.0);
}

TEST_CASE("policy switch selects the kernel path") {
  kernels::set_policy(kernels::Policy::serial);
  CHECK(kernels::policy() == kernels::Policy::serial);
  kernels::set_policy(kernels::Policy::automatic);
  CHECK(kernels::policy() == kernels::Policy::automatic);
}
