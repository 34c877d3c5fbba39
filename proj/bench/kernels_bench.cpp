// Serial reference vs OpenMP kernels on the same inputs.
#include <benchmark/benchmark.h>

#include <vector>

#include "afd/kernels.hpp"
#include "afd/rng.hpp"

using namespace afd;
using namespace afd::kernels;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

template <auto Kernel>
void bm_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const MatDims d{n, n, n};
  const auto a = noise(n * n, 1), b = noise(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    Kernel(a, b, c, d);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}

// Text tokens attending over a long audio sequence, as in the xattn layers.
template <auto Kernel>
void bm_attention(benchmark::State& state) {
  const auto l2 = static_cast<std::size_t>(state.range(0));
  const AttnDims dims{80, l2, 64, 4, false};
  const auto q = noise(dims.l1 * dims.d, 3), k = noise(l2 * dims.d, 4), v = noise(l2 * dims.d, 5);
  std::vector<double> probs(dims.heads * dims.l1 * l2), out(dims.l1 * dims.d);
  for (auto _ : state) {
    Kernel(q, k, v, probs, out, dims);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(dims.l1 * l2 * dims.d));
}

template <auto Kernel>
void bm_attention_backward(benchmark::State& state) {
  const auto l2 = static_cast<std::size_t>(state.range(0));
  const AttnDims dims{80, l2, 64, 4, false};
  const auto q = noise(dims.l1 * dims.d, 3), k = noise(l2 * dims.d, 4), v = noise(l2 * dims.d, 5);
  const auto dout = noise(dims.l1 * dims.d, 6);
  std::vector<double> probs(dims.heads * dims.l1 * l2), out(dims.l1 * dims.d);
  attention_forward_serial(q, k, v, probs, out, dims);
  std::vector<double> dq(q.size()), dk(k.size()), dv(v.size());
  for (auto _ : state) {
    Kernel(q, k, v, probs, dout, dq, dk, dv, dims);
    benchmark::DoNotOptimize(dq.data());
  }
}

}  // namespace

BENCHMARK(bm_matmul<matmul_serial>)->Name("matmul/serial")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_matmul<matmul_parallel>)->Name("matmul/parallel")->Arg(64)->Arg(128)->Arg(256)->UseRealTime();
BENCHMARK(bm_attention<attention_forward_serial>)->Name("xattn_forward/serial")->Arg(300)->Arg(1920);
BENCHMARK(bm_attention<attention_forward_parallel>)
    ->Name("xattn_forward/parallel")
    ->Arg(300)
    ->Arg(1920)
    ->UseRealTime();
BENCHMARK(bm_attention_backward<attention_backward_serial>)->Name("xattn_backward/serial")->Arg(1920);
BENCHMARK(bm_attention_backward<attention_backward_parallel>)
    ->Name("xattn_backward/parallel")
    ->Arg(1920)
    ->UseRealTime();

BENCHMARK_MAIN();
