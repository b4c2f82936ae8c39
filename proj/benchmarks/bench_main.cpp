#include <benchmark/benchmark.h>

#include <random>

#include "dehaze/generator.hpp"
#include "dehaze/losses.hpp"
#include "dehaze/metrics.hpp"
#include "dehaze/ops.hpp"

namespace dehaze {
namespace {

Tensor<float> random_tensor(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  Tensor<float> t(s);
  for (float& v : t.span()) v = n(rng);
  return t;
}

ImageTensor random_image(int side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  ImageTensor im(side, side, 3);
  for (float& v : im.values()) v = u(rng);
  return im;
}

// 3x3 stride-1 conv at the residual-block width. Args: channels, spatial side.
void BM_Conv3x3Forward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), side = static_cast<int>(state.range(1));
  const Var<float> x(random_tensor(Shape{1, c, side, side}, 1));
  const Var<float> w(random_tensor(Shape{c, c, 3, 3}, 2));
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, w, Var<float>(), {1, 1}));
  state.counters["FLOP/s"] = benchmark::Counter(2.0 * c * c * 9 * side * side, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv3x3Forward)->Args({64, 64})->Args({256, 16})->Args({256, 64})->Unit(benchmark::kMillisecond);

void BM_Conv3x3Backward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), side = static_cast<int>(state.range(1));
  const Var<float> x(random_tensor(Shape{1, c, side, side}, 1), true);
  const Var<float> w(random_tensor(Shape{c, c, 3, 3}, 2), true);
  const Var<float> target(Tensor<float>(Shape{1, c, side, side}));
  for (auto _ : state) {
    x.zero_grad();
    w.zero_grad();
    backward(losses::feature_mse(ops::conv2d(x, w, Var<float>(), {1, 1}), target));
  }
}
BENCHMARK(BM_Conv3x3Backward)->Args({64, 32})->Args({256, 16})->Unit(benchmark::kMillisecond);

void BM_GeneratorForward(benchmark::State& state) {
  const Generator<float> g(1);
  const ImageTensor im = random_image(static_cast<int>(state.range(0)), 3);
  for (auto _ : state) benchmark::DoNotOptimize(dehaze::dehaze(g, im));
}
BENCHMARK(BM_GeneratorForward)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Psnr(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const ImageTensor a = random_image(side, 4), b = random_image(side, 5);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::psnr(a, b));
}
BENCHMARK(BM_Psnr)->Arg(256)->Arg(1024);

void BM_SsimGlobal(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const ImageTensor a = random_image(side, 4), b = random_image(side, 5);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::ssim(a, b));
}
BENCHMARK(BM_SsimGlobal)->Arg(256)->Arg(1024);

void BM_SsimWindowed(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const ImageTensor a = random_image(side, 4), b = random_image(side, 5);
  metrics::SsimConfig cfg;
  cfg.mode = metrics::SsimMode::Windowed;
  for (auto _ : state) benchmark::DoNotOptimize(metrics::ssim(a, b, cfg));
}
BENCHMARK(BM_SsimWindowed)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace dehaze

BENCHMARK_MAIN();
