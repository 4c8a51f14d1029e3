// Fast (OpenMP + Eigen) kernels against the serial reference loops, at the
// shapes the default model actually runs.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "tiser/kernels.hpp"

namespace k = tiser::kernels;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// {nodes, length, channels, taps, filters, stride}
k::ConvGeometry geometry(int layer) {
  return layer == 1 ? k::ConvGeometry{20, 1000, 3, 125, 32, 2}
                    : k::ConvGeometry{20, 438, 32, 125, 64, 2};
}

template <bool Fast>
void BM_ConvForward(benchmark::State& st) {
  const k::ConvGeometry g = geometry(static_cast<int>(st.range(0)));
  const auto x = noise(g.nodes * g.length * g.channels, 1);
  const auto w = noise(g.patch() * g.filters, 2);
  const auto b = noise(g.filters, 3);
  std::vector<double> y(g.nodes * g.out_length() * g.filters);
  for (auto _ : st) {
    if constexpr (Fast) k::conv1d_forward(g, x.data(), w.data(), b.data(), y.data());
    else k::reference::conv1d_forward(g, x.data(), w.data(), b.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
  st.counters["GFLOP/s"] = benchmark::Counter(
      2.0 * g.nodes * g.out_length() * g.patch() * g.filters, benchmark::Counter::kIsIterationInvariantRate,
      benchmark::Counter::kIs1000);
}

template <bool Fast>
void BM_ConvBackwardKernel(benchmark::State& st) {
  const k::ConvGeometry g = geometry(static_cast<int>(st.range(0)));
  const auto x = noise(g.nodes * g.length * g.channels, 1);
  const auto dy = noise(g.nodes * g.out_length() * g.filters, 2);
  std::vector<double> dw(g.patch() * g.filters);
  for (auto _ : st) {
    if constexpr (Fast) k::conv1d_backward_kernel(g, x.data(), dy.data(), dw.data());
    else k::reference::conv1d_backward_kernel(g, x.data(), dy.data(), dw.data());
    benchmark::DoNotOptimize(dw.data());
  }
}

template <bool Fast>
void BM_ConvBackwardInput(benchmark::State& st) {
  const k::ConvGeometry g = geometry(static_cast<int>(st.range(0)));
  const auto w = noise(g.patch() * g.filters, 1);
  const auto dy = noise(g.nodes * g.out_length() * g.filters, 2);
  std::vector<double> dx(g.nodes * g.length * g.channels);
  for (auto _ : st) {
    if constexpr (Fast) k::conv1d_backward_input(g, dy.data(), w.data(), dx.data());
    else k::reference::conv1d_backward_input(g, dy.data(), w.data(), dx.data());
    benchmark::DoNotOptimize(dx.data());
  }
}

// GCN layer input: [N, T'*F] x [T'*F, 64].
template <bool Fast>
void BM_Matmul(benchmark::State& st) {
  const std::size_t m = st.range(0), kk = st.range(1), n = st.range(2);
  const auto a = noise(m * kk, 1), b = noise(kk * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : st) {
    if constexpr (Fast) k::matmul(a.data(), b.data(), c.data(), m, kk, n);
    else k::reference::matmul(a.data(), b.data(), c.data(), m, kk, n);
    benchmark::DoNotOptimize(c.data());
  }
  st.counters["GFLOP/s"] = benchmark::Counter(2.0 * m * kk * n, benchmark::Counter::kIsIterationInvariantRate,
                                              benchmark::Counter::kIs1000);
}

}  // namespace

BENCHMARK(BM_ConvForward<true>)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<false>)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardKernel<true>)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardKernel<false>)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardInput<true>)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardInput<false>)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Matmul<true>)->Args({20, 10048, 64})->Args({64, 64, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Matmul<false>)->Args({20, 10048, 64})->Args({64, 64, 64})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
