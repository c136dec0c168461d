// Serial reference kernels against the OpenMP kernels, plus a full GRU step.

#include <benchmark/benchmark.h>

#include <vector>

#include "sbgru/kernels.hpp"
#include "sbgru/layers.hpp"
#include "sbgru/rng.hpp"

using namespace sbgru;

namespace {

std::vector<double> filled(std::size_t n, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = 2.0 * rng.uniform() - 1.0;
  return v;
}

using Gemm = void (*)(kernels::GemmDims, std::span<const double>, std::span<const double>, std::span<double>, bool);

void run_gemm(benchmark::State& state, Gemm fn) {
  const kernels::GemmDims d{static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)),
                            static_cast<std::size_t>(state.range(2))};
  const auto a = filled(d.m * d.k, 1), b = filled(d.k * d.n, 2);
  std::vector<double> c(d.m * d.n);
  for (auto _ : state) {
    fn(d, a, b, c, false);
    benchmark::DoNotOptimize(c.data());
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * d.m * d.n * d.k));
}

void gemm_shapes(benchmark::internal::Benchmark* b) {
  b->Args({8, 128, 64});       // desk batch through a 64-unit layer
  b->Args({128, 256, 256});
  b->Args({128, 1000, 1000});  // paper batch through a 1000-unit layer
}

void BM_matmul_serial(benchmark::State& s) { run_gemm(s, kernels::serial::matmul); }
void BM_matmul_omp(benchmark::State& s) { run_gemm(s, kernels::omp::matmul); }
void BM_matmul_tn_serial(benchmark::State& s) { run_gemm(s, kernels::serial::matmul_tn); }
void BM_matmul_tn_omp(benchmark::State& s) { run_gemm(s, kernels::omp::matmul_tn); }
void BM_matmul_nt_serial(benchmark::State& s) { run_gemm(s, kernels::serial::matmul_nt); }
void BM_matmul_nt_omp(benchmark::State& s) { run_gemm(s, kernels::omp::matmul_nt); }

BENCHMARK(BM_matmul_serial)->Apply(gemm_shapes)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_matmul_omp)->Apply(gemm_shapes)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_matmul_tn_serial)->Apply(gemm_shapes)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_matmul_tn_omp)->Apply(gemm_shapes)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_matmul_nt_serial)->Apply(gemm_shapes)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_matmul_nt_omp)->Apply(gemm_shapes)->Unit(benchmark::kMicrosecond);

// Forward and backward through one SB-GRU step with sampled noise.
void BM_sbgru_step(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto units = static_cast<std::size_t>(state.range(1));
  const auto kind = static_cast<LayerKind>(state.range(2));
  RngStream rng(3);
  SBGRUCell cell = SBGRUCell::create(units, units, kind, rng);
  const Tensor x = Tensor::from({batch, units}, filled(batch * units, 4));
  const Tensor y = Tensor::from({batch, units}, filled(batch * units, 5));
  for (auto _ : state) {
    const LayerNoise n = sample_layer_noise(cell, rng, 0.5, NoiseMode::train, 0.0);
    backward(sum(sbgru_step(x, y, cell, n.candidate_weight())));
    for (auto& [name, t] : cell.parameters()) t->zero_grad();
  }
  state.SetLabel(std::string(to_string(kind)));
}

BENCHMARK(BM_sbgru_step)
    ->ArgsProduct({{8}, {64}, {static_cast<long>(LayerKind::plain), static_cast<long>(LayerKind::repar),
                               static_cast<long>(LayerKind::bp), static_cast<long>(LayerKind::sb)}})
    ->Args({128, 256, static_cast<long>(LayerKind::sb)})
    ->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
