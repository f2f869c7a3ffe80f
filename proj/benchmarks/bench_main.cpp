#include <benchmark/benchmark.h>

#include "lfsynth/losses.hpp"
#include "lfsynth/metrics.hpp"
#include "lfsynth/pipeline.hpp"

using namespace lfsynth;

namespace {

Tensor<float> random_tensor(Shape s, std::uint64_t seed) {
  CounterRng rng(seed);
  Tensor<float> t(std::move(s));
  for (auto& v : t.mutable_data()) v = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

// Args: channels in/out, spatial size, dilation.
void BM_Conv2d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto dil = static_cast<std::size_t>(state.range(2));
  auto x = random_tensor({1, c, n, n}, 1);
  auto k = random_tensor({c, c, 3, 3}, 2);
  auto b = random_tensor({c}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, k, b, dil));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * c * c * 9 * n * n));
}
BENCHMARK(BM_Conv2d)->Args({32, 32, 1})->Args({128, 32, 1})->Args({128, 32, 8})->Args({128, 64, 2})
    ->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  auto x = random_tensor({1, c, n, n}, 1).set_requires_grad(true);
  auto k = random_tensor({c, c, 3, 3}, 2).set_requires_grad(true);
  auto b = random_tensor({c}, 3).set_requires_grad(true);
  for (auto _ : state) {
    Tape<float> tape;
    TapeScope<float> scope(tape);
    backward(sum(conv2d(x, k, b, 2)), tape);
  }
}
BENCHMARK(BM_Conv2dBackward)->Args({32, 32})->Args({128, 32})->Unit(benchmark::kMillisecond);

std::array<Tensor<float>, 4> corners(std::size_t n) {
  return {random_tensor({1, 3, n, n}, 10), random_tensor({1, 3, n, n}, 11), random_tensor({1, 3, n, n}, 12),
          random_tensor({1, 3, n, n}, 13)};
}

// Full synthesis of one view at inference time.
void BM_SynthesizeForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto w = make_model<float>(NetKind::plenoptic, 1);
  const auto c = corners(n);
  for (auto _ : state) benchmark::DoNotOptimize(synthesize(w, c, {{3, 2}}, 6, NormMode::eval));
}
BENCHMARK(BM_SynthesizeForward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

// One training step worth of forward + backward on a batch of patches.
void BM_SynthesizeTrainStep(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto w = make_model<float>(NetKind::plenoptic, 1);
  const auto c = corners(n);
  const auto gt = random_tensor({1, 3, n, n}, 20);
  for (auto _ : state) {
    w.zero_grad();
    Tape<float> tape;
    TapeScope<float> scope(tape);
    auto r = synthesize(w, c, {{3, 2}}, 6, NormMode::train);
    backward(loss_total(r, gt, LossTerms{}), tape);
  }
}
BENCHMARK(BM_SynthesizeTrainStep)->Arg(32)->Arg(60)->Unit(benchmark::kMillisecond);

void BM_Ssim(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  CounterRng rng(5);
  Image a(3, n, n), b(3, n, n);
  for (auto& v : a.data) v = static_cast<float>(rng.uniform01());
  for (auto& v : b.data) v = static_cast<float>(rng.uniform01());
  for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(BM_Ssim)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
