#include "afd/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace afd::kernels {

namespace {

std::atomic<Policy> g_policy{Policy::automatic};

bool use_parallel(std::size_t work) {
  switch (g_policy.load(std::memory_order_relaxed)) {
    case Policy::serial:
      return false;
    case Policy::parallel:
      return true;
    case Policy::automatic:
      return work >= kParallelThreshold && max_threads() > 1;
  }
  return false;
}

// Row i of c = a * b. Shared by both variants so the accumulation order matches.
inline void matmul_row(const double* a, const double* b, double* c, std::size_t i, const MatDims& d) {
  double* crow = c + i * d.n;
  std::fill(crow, crow + d.n, 0.0);
  const double* arow = a + i * d.k;
  for (std::size_t p = 0; p < d.k; ++p) {
    const double av = arow[p];
    const double* brow = b + p * d.n;
    for (std::size_t j = 0; j < d.n; ++j) crow[j] += av * brow[j];
  }
}

inline void matmul_nt_row(const double* a, const double* b, double* c, std::size_t i, const MatDims& d) {
  const double* arow = a + i * d.k;
  double* crow = c + i * d.n;
  for (std::size_t j = 0; j < d.n; ++j) {
    const double* brow = b + j * d.k;
    double acc = 0.0;
    for (std::size_t p = 0; p < d.k; ++p) acc += arow[p] * brow[p];
    crow[j] = acc;
  }
}

inline void matmul_tn_row(const double* a, const double* b, double* c, std::size_t i, const MatDims& d) {
  double* crow = c + i * d.n;
  std::fill(crow, crow + d.n, 0.0);
  for (std::size_t p = 0; p < d.k; ++p) {
    const double av = a[p * d.m + i];
    const double* brow = b + p * d.n;
    for (std::size_t j = 0; j < d.n; ++j) crow[j] += av * brow[j];
  }
}

inline std::size_t key_limit(const AttnDims& dims, std::size_t i) {
  return dims.causal ? std::min(i + 1, dims.l2) : dims.l2;
}

void attention_row(const double* q, const double* k, const double* v, double* probs, double* out,
                   const AttnDims& dims, std::size_t h, std::size_t i) {
  const std::size_t dh = dims.d / dims.heads;
  const std::size_t off = h * dh;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  double* p = probs + (h * dims.l1 + i) * dims.l2;
  const std::size_t limit = key_limit(dims, i);
  const double* qi = q + i * dims.d + off;
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < limit; ++j) {
    const double* kj = k + j * dims.d + off;
    double s = 0.0;
    for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
    s *= inv;
    p[j] = s;
    mx = std::max(mx, s);
  }
  double z = 0.0;
  for (std::size_t j = 0; j < limit; ++j) {
    p[j] = std::exp(p[j] - mx);
    z += p[j];
  }
  for (std::size_t j = 0; j < limit; ++j) p[j] /= z;
  for (std::size_t j = limit; j < dims.l2; ++j) p[j] = 0.0;
  double* oi = out + i * dims.d + off;
  std::fill(oi, oi + dh, 0.0);
  for (std::size_t j = 0; j < limit; ++j) {
    const double* vj = v + j * dims.d + off;
    const double pj = p[j];
    for (std::size_t c = 0; c < dh; ++c) oi[c] += pj * vj[c];
  }
}

void attention_backward_head(const double* q, const double* k, const double* v, const double* probs,
                             const double* dout, double* dq, double* dk, double* dv,
                             const AttnDims& dims, std::size_t h) {
  const std::size_t dh = dims.d / dims.heads;
  const std::size_t off = h * dh;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> dp(dims.l2);
  for (std::size_t i = 0; i < dims.l1; ++i) {
    const double* p = probs + (h * dims.l1 + i) * dims.l2;
    const std::size_t limit = key_limit(dims, i);
    const double* gi = dout + i * dims.d + off;
    double dot = 0.0;
    for (std::size_t j = 0; j < limit; ++j) {
      const double* vj = v + j * dims.d + off;
      double* dvj = dv + j * dims.d + off;
      double acc = 0.0;
      for (std::size_t c = 0; c < dh; ++c) {
        acc += gi[c] * vj[c];
        dvj[c] += p[j] * gi[c];
      }
      dp[j] = acc;
      dot += p[j] * acc;
    }
    const double* qi = q + i * dims.d + off;
    double* dqi = dq + i * dims.d + off;
    for (std::size_t j = 0; j < limit; ++j) {
      const double ds = p[j] * (dp[j] - dot) * inv;
      const double* kj = k + j * dims.d + off;
      double* dkj = dk + j * dims.d + off;
      for (std::size_t c = 0; c < dh; ++c) {
        dqi[c] += ds * kj[c];
        dkj[c] += ds * qi[c];
      }
    }
  }
}

}  // namespace

void set_policy(Policy p) { g_policy.store(p, std::memory_order_relaxed); }
Policy policy() { return g_policy.load(std::memory_order_relaxed); }

void set_num_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

bool openmp_enabled() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

void matmul_serial(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d) {
  for (std::size_t i = 0; i < d.m; ++i) matmul_row(a.data(), b.data(), c.data(), i, d);
}

void matmul_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d) {
  const auto m = static_cast<std::int64_t>(d.m);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) matmul_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), d);
}

void matmul_nt_serial(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d) {
  for (std::size_t i = 0; i < d.m; ++i) matmul_nt_row(a.data(), b.data(), c.data(), i, d);
}

void matmul_nt_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d) {
  const auto m = static_cast<std::int64_t>(d.m);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) matmul_nt_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), d);
}

void matmul_tn_serial(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d) {
  for (std::size_t i = 0; i < d.m; ++i) matmul_tn_row(a.data(), b.data(), c.data(), i, d);
}

void matmul_tn_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d) {
  const auto m = static_cast<std::int64_t>(d.m);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) matmul_tn_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), d);
}

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d) {
  if (use_parallel(d.m * d.k * d.n)) {
    matmul_parallel(a, b, c, d);
  } else {
    matmul_serial(a, b, c, d);
  }
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d) {
  if (use_parallel(d.m * d.k * d.n)) {
    matmul_nt_parallel(a, b, c, d);
  } else {
    matmul_nt_serial(a, b, c, d);
  }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d) {
  if (use_parallel(d.m * d.k * d.n)) {
    matmul_tn_parallel(a, b, c, d);
  } else {
    matmul_tn_serial(a, b, c, d);
  }
}

void attention_forward_serial(std::span<const double> q, std::span<const double> k,
                              std::span<const double> v, std::span<double> probs,
                              std::span<double> out, AttnDims dims) {
  for (std::size_t h = 0; h < dims.heads; ++h)
    for (std::size_t i = 0; i < dims.l1; ++i)
      attention_row(q.data(), k.data(), v.data(), probs.data(), out.data(), dims, h, i);
}

void attention_forward_parallel(std::span<const double> q, std::span<const double> k,
                                std::span<const double> v, std::span<double> probs,
                                std::span<double> out, AttnDims dims) {
  const auto total = static_cast<std::int64_t>(dims.heads * dims.l1);
#pragma omp parallel for schedule(static)
  for (std::int64_t t = 0; t < total; ++t) {
    const auto h = static_cast<std::size_t>(t) / dims.l1;
    const auto i = static_cast<std::size_t>(t) % dims.l1;
    attention_row(q.data(), k.data(), v.data(), probs.data(), out.data(), dims, h, i);
  }
}

void attention_backward_serial(std::span<const double> q, std::span<const double> k,
                               std::span<const double> v, std::span<const double> probs,
                               std::span<const double> dout, std::span<double> dq,
                               std::span<double> dk, std::span<double> dv, AttnDims dims) {
  for (std::size_t h = 0; h < dims.heads; ++h)
    attention_backward_head(q.data(), k.data(), v.data(), probs.data(), dout.data(), dq.data(),
                            dk.data(), dv.data(), dims, h);
}

void attention_backward_parallel(std::span<const double> q, std::span<const double> k,
                                 std::span<const double> v, std::span<const double> probs,
                                 std::span<const double> dout, std::span<double> dq,
                                 std::span<double> dk, std::span<double> dv, AttnDims dims) {
  // Heads own disjoint column blocks of dq/dk/dv.
  const auto heads = static_cast<std::int64_t>(dims.heads);
#pragma omp parallel for schedule(static)
  for (std::int64_t h = 0; h < heads; ++h)
    attention_backward_head(q.data(), k.data(), v.data(), probs.data(), dout.data(), dq.data(),
                            dk.data(), dv.data(), dims, static_cast<std::size_t>(h));
}

void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<double> probs,
                       std::span<double> out, AttnDims dims) {
  if (use_parallel(dims.heads * dims.l1 * dims.l2 * (dims.d / dims.heads))) {
    attention_forward_parallel(q, k, v, probs, out, dims);
  } else {
    attention_forward_serial(q, k, v, probs, out, dims);
  }
}

void attention_backward(std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> dout, std::span<double> dq,
                        std::span<double> dk, std::span<double> dv, AttnDims dims) {
  if (dims.heads > 1 && use_parallel(dims.heads * dims.l1 * dims.l2 * (dims.d / dims.heads))) {
    attention_backward_parallel(q, k, v, probs, dout, dq, dk, dv, dims);
  } else {
    attention_backward_serial(q, k, v, probs, dout, dq, dk, dv, dims);
  }
}

}  // namespace afd::kernels
