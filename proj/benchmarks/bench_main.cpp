#include <benchmark/benchmark.h>

#include <llie/metrics.hpp>
#include <llie/ops.hpp>
#include <llie/preproc.hpp>
#include <llie/rng.hpp>
#include <llie/unet.hpp>

namespace {

using namespace llie;

Tensor random_tensor(const Shape& shape, Rng& rng) {
  Tensor t = Tensor::zeros(shape);
  for (auto& v : t.mutable_data()) v = static_cast<float>(rng.uniform(0.0, 1.0));
  return t;
}

ImageU8 random_image(int w, int h, Rng& rng) {
  ImageU8 img(w, h, 3);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

// args: channels, spatial size, groups (1 = dense, channels = depthwise)
void BM_Conv3x3(benchmark::State& state) {
  const auto c = state.range(0), s = state.range(1);
  const int groups = static_cast<int>(state.range(2));
  Rng rng(1);
  const Tensor x = random_tensor({4, c, s, s}, rng);
  const Tensor w = random_tensor({c, c / groups, 3, 3}, rng);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, Tensor(), {1, 1, groups}));
}
BENCHMARK(BM_Conv3x3)->Args({22, 64, 1})->Args({88, 64, 88})->Args({44, 32, 1})->Unit(benchmark::kMillisecond);

void BM_PointwiseConv(benchmark::State& state) {
  const auto c = state.range(0);
  Rng rng(2);
  const Tensor x = random_tensor({4, c, 64, 64}, rng);
  const Tensor w = random_tensor({4 * c, c, 1, 1}, rng);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, Tensor()));
}
BENCHMARK(BM_PointwiseConv)->Arg(22)->Unit(benchmark::kMillisecond);

void BM_TinyForward(benchmark::State& state) {
  const DwUNet m = DwUNet::build(ModelConfig::tiny(), 0);
  Rng rng(3);
  const Tensor x = random_tensor({1, 9, state.range(0), state.range(0)}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(m.infer(x));
}
BENCHMARK(BM_TinyForward)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_TinyTrainStep(benchmark::State& state) {
  DwUNet m = DwUNet::build(ModelConfig::tiny(), 0);
  m.set_requires_grad(true);
  Rng rng(4);
  const Tensor x = random_tensor({4, 9, 64, 64}, rng);
  const Tensor t = random_tensor({4, 3, 64, 64}, rng);
  for (auto _ : state) {
    m.zero_grad();
    backward(l1_loss(m.forward(x), t));
  }
}
BENCHMARK(BM_TinyTrainStep)->Unit(benchmark::kMillisecond);

void BM_Clahe(benchmark::State& state) {
  Rng rng(5);
  const ImageF32 img = to_f32(random_image(int(state.range(0)), int(state.range(0)), rng));
  for (auto _ : state) benchmark::DoNotOptimize(apply_clahe(img, 2.0, 8));
}
BENCHMARK(BM_Clahe)->Arg(256)->Arg(600)->Unit(benchmark::kMillisecond);

void BM_Ssim(benchmark::State& state) {
  Rng rng(6);
  const ImageU8 a = random_image(int(state.range(0)), int(state.range(0)), rng);
  const ImageU8 b = random_image(int(state.range(0)), int(state.range(0)), rng);
  for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(BM_Ssim)->Arg(256)->Arg(600)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
