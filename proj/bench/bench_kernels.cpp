// Serial reference kernels against their OpenMP counterparts at model-like sizes.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "metsk/kernels.hpp"

namespace k = metsk::kernels;

namespace {

std::vector<double> filled(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <bool Parallel>
void BM_gemm(benchmark::State& state) {
  const std::size_t m = state.range(0), kk = state.range(1), n = state.range(2);
  const auto a = filled(m * kk, 1), b = filled(kk * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    if constexpr (Parallel) k::parallel::gemm_nn(a, b, c, m, kk, n);
    else k::serial::gemm_nn(a, b, c, m, kk, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * m * kk * n);
}

// batch 32 windows x 16 parcels, length 32, 16 -> 16 channels, 9 taps
template <bool Parallel>
void BM_conv_time(benchmark::State& state) {
  const k::ConvDims d{static_cast<std::size_t>(state.range(0)), 32, 16, 16, 9};
  const auto x = filled(d.rows * d.length * d.in_channels, 3);
  const auto w = filled(d.out_channels * d.in_channels * d.taps, 4);
  std::vector<double> y(d.rows * d.length * d.out_channels);
  for (auto _ : state) {
    std::fill(y.begin(), y.end(), 0.0);
    if constexpr (Parallel) k::parallel::conv_time(x, w, y, d);
    else k::serial::conv_time(x, w, y, d);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_conv_time_grad_kernel(benchmark::State& state) {
  const k::ConvDims d{static_cast<std::size_t>(state.range(0)), 32, 16, 16, 9};
  const auto x = filled(d.rows * d.length * d.in_channels, 5);
  const auto dy = filled(d.rows * d.length * d.out_channels, 6);
  std::vector<double> dw(d.out_channels * d.in_channels * d.taps);
  for (auto _ : state) {
    std::fill(dw.begin(), dw.end(), 0.0);
    if constexpr (Parallel) k::parallel::conv_time_grad_kernel(x, dy, dw, d);
    else k::serial::conv_time_grad_kernel(x, dy, dw, d);
    benchmark::DoNotOptimize(dw.data());
  }
}

template <bool Parallel>
void BM_node_mix(benchmark::State& state) {
  const k::MixDims d{static_cast<std::size_t>(state.range(0)), 16, 32 * 16};
  const auto a = filled(d.groups * d.nodes * d.nodes, 7);
  const auto x = filled(d.groups * d.nodes * d.width, 8);
  std::vector<double> y(x.size());
  for (auto _ : state) {
    std::fill(y.begin(), y.end(), 0.0);
    if constexpr (Parallel) k::parallel::node_mix(a, x, y, d, false);
    else k::serial::node_mix(a, x, y, d, false);
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_gemm<false>)->Args({512, 16, 16})->Args({256, 256, 256});
BENCHMARK(BM_gemm<true>)->Args({512, 16, 16})->Args({256, 256, 256});
BENCHMARK(BM_conv_time<false>)->Arg(32 * 16)->Arg(128 * 16);
BENCHMARK(BM_conv_time<true>)->Arg(32 * 16)->Arg(128 * 16);
BENCHMARK(BM_conv_time_grad_kernel<false>)->Arg(32 * 16);
BENCHMARK(BM_conv_time_grad_kernel<true>)->Arg(32 * 16);
BENCHMARK(BM_node_mix<false>)->Arg(32)->Arg(128);
BENCHMARK(BM_node_mix<true>)->Arg(32)->Arg(128);

BENCHMARK_MAIN();
