// OpenMP kernels against the serial reference loops, at the classifier's layer shapes.

#include <benchmark/benchmark.h>

#include <vector>

#include "zeropur/image_ops.hpp"
#include "zeropur/kernels.hpp"
#include "zeropur/rng.hpp"

namespace {

using zp::Conv2dGeometry;

std::vector<float> noise(std::size_t n, std::uint64_t seed) {
  zp::Rng rng(seed);
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

// Args: batch, channels in, spatial side, channels out, stride.
Conv2dGeometry geometry(const benchmark::State& st) {
  Conv2dGeometry g;
  g.batch = static_cast<std::size_t>(st.range(0));
  g.in_channels = static_cast<std::size_t>(st.range(1));
  g.height = g.width = static_cast<std::size_t>(st.range(2));
  g.out_channels = static_cast<std::size_t>(st.range(3));
  g.kernel_h = g.kernel_w = 3;
  g.stride = static_cast<std::size_t>(st.range(4));
  g.pad = 1;
  return g;
}

template <bool Reference>
void BM_ConvForward(benchmark::State& st) {
  const Conv2dGeometry g = geometry(st);
  const auto x = noise(g.input_numel(), 1), w = noise(g.weight_numel(), 2);
  std::vector<float> y(g.output_numel());
  for (auto _ : st) {
    if constexpr (Reference) {
      zp::reference::conv2d_forward<float>(g, x, w, y);
    } else {
      zp::kernels::conv2d_forward<float>(g, x, w, y);
    }
    benchmark::DoNotOptimize(y.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<long>(g.batch));
}

template <bool Reference>
void BM_ConvBackwardInput(benchmark::State& st) {
  const Conv2dGeometry g = geometry(st);
  const auto w = noise(g.weight_numel(), 2), gy = noise(g.output_numel(), 3);
  std::vector<float> gx(g.input_numel());
  for (auto _ : st) {
    if constexpr (Reference) {
      zp::reference::conv2d_backward_input<float>(g, w, gy, gx);
    } else {
      zp::kernels::conv2d_backward_input<float>(g, w, gy, gx);
    }
    benchmark::DoNotOptimize(gx.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<long>(g.batch));
}

template <bool Reference>
void BM_ConvBackwardWeight(benchmark::State& st) {
  const Conv2dGeometry g = geometry(st);
  const auto x = noise(g.input_numel(), 1), gy = noise(g.output_numel(), 3);
  std::vector<float> gw(g.weight_numel());
  for (auto _ : st) {
    if constexpr (Reference) {
      zp::reference::conv2d_backward_weight<float>(g, x, gy, gw);
    } else {
      zp::kernels::conv2d_backward_weight<float>(g, x, gy, gw);
    }
    benchmark::DoNotOptimize(gw.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<long>(g.batch));
}

template <bool Reference>
void BM_Matmul(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto a = noise(n * n, 4), b = noise(n * n, 5);
  std::vector<float> c(n * n);
  for (auto _ : st) {
    if constexpr (Reference) {
      zp::reference::matmul<float>(n, n, n, a, b, c);
    } else {
      zp::kernels::matmul<float>(n, n, n, a, b, c);
    }
    benchmark::DoNotOptimize(c.data());
  }
}

void BM_GaussianBlur(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  zp::Tensor x({n, 3, 32, 32}, zp::DType::f32);
  zp::Rng rng(6);
  for (std::size_t i = 0; i < x.numel(); ++i) x.set(i, rng.uniform());
  for (auto _ : st) benchmark::DoNotOptimize(zp::gaussian_blur(x, 1.2));
  st.SetItemsProcessed(st.iterations() * static_cast<long>(n));
}

void conv_shapes(benchmark::internal::Benchmark* b) {
  b->ArgNames({"n", "cin", "hw", "cout", "stride"});
  b->Args({32, 3, 32, 16, 1});
  b->Args({32, 16, 32, 32, 2});
  b->Args({32, 32, 16, 64, 2});
  b->Args({32, 64, 8, 64, 1});
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/openmp")->Apply(conv_shapes)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/reference")->Apply(conv_shapes)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardInput<false>)
    ->Name("conv_backward_input/openmp")
    ->Apply(conv_shapes)
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardInput<true>)
    ->Name("conv_backward_input/reference")
    ->Apply(conv_shapes)
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardWeight<false>)
    ->Name("conv_backward_weight/openmp")
    ->Apply(conv_shapes)
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardWeight<true>)
    ->Name("conv_backward_weight/reference")
    ->Apply(conv_shapes)
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Matmul<false>)->Name("matmul/openmp")->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Matmul<true>)->Name("matmul/reference")->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_GaussianBlur)->Arg(64)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
