#pragma once

// Dense inner loops. Every kernel exists twice: a plain serial reference and an
// OpenMP version that splits independent output rows (or heads) across
// threads. Both run the same per-element accumulation order, so their results
// are bit-identical; the tests hold them to that.

#include <cstddef>
#include <span>

namespace afd::kernels {

enum class Policy { serial, parallel, automatic };

void set_policy(Policy policy);
Policy policy();
void set_num_threads(int threads);
int max_threads();
bool openmp_enabled();

// Work (multiply-adds) below which `automatic` stays serial.
inline constexpr std::size_t kParallelThreshold = 1 << 15;

struct MatDims {
  std::size_t m, k, n;
};

// c (m x n) = a (m x k) * b (k x n)
void matmul_serial(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d);
void matmul_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d);
// c (m x n) = a (m x k) * b^T, b stored n x k
void matmul_nt_serial(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d);
void matmul_nt_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d);
// c (m x n) = a^T * b, a stored k x m, b stored k x n
void matmul_tn_serial(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d);
void matmul_tn_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d);

// Dispatch on the current policy.
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d);

struct AttnDims {
  std::size_t l1;  // queries
  std::size_t l2;  // keys / values
  std::size_t d;   // model width
  std::size_t heads;
  bool causal;
};

// probs: heads x l1 x l2 softmax weights, kept for the backward pass.
// out: l1 x d.
void attention_forward_serial(std::span<const double> q, std::span<const double> k,
                              std::span<const double> v, std::span<double> probs,
                              std::span<double> out, AttnDims dims);
void attention_forward_parallel(std::span<const double> q, std::span<const double> k,
                                std::span<const double> v, std::span<double> probs,
                                std::span<double> out, AttnDims dims);
// Accumulates (+=) into dq, dk, dv.
void attention_backward_serial(std::span<const double> q, std::span<const double> k,
                               std::span<const double> v, std::span<const double> probs,
                               std::span<const double> dout, std::span<double> dq,
                               std::span<double> dk, std::span<double> dv, AttnDims dims);
void attention_backward_parallel(std::span<const double> q, std::span<const double> k,
                                 std::span<const double> v, std::span<const double> probs,
                                 std::span<const double> dout, std::span<double> dq,
                                 std::span<double> dk, std::span<double> dv, AttnDims dims);

void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<double> probs,
                       std::span<double> out, AttnDims dims);
void attention_backward(std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> dout, std::span<double> dq,
                        std::span<double> dk, std::span<double> dv, AttnDims dims);

}  // namespace afd::kernels
