#include <benchmark/benchmark.h>

#include "cropmatch/attack.hpp"
#include "cropmatch/encoders.hpp"
#include "cropmatch/image.hpp"
#include "cropmatch/rng.hpp"
#include "cropmatch/transforms.hpp"

namespace {

using namespace cropmatch;

ImageTensor noise_image(int side, std::uint64_t seed) {
  Rng rng(seed);
  ImageTensor img(side, side);
  for (double& v : img.data) v = rng.uniform();
  return img;
}

void BM_ResizeBilinear(benchmark::State& state) {
  const ImageTensor img = noise_image(64, 1);
  const int out = static_cast<int>(state.range(0));
  for (auto _ : state)
    benchmark::DoNotOptimize(resize_bilinear(img, out, out));
}
BENCHMARK(BM_ResizeBilinear)->Arg(32)->Arg(224);

void BM_ResizeBilinearVjp(benchmark::State& state) {
  const ImageTensor cot = noise_image(static_cast<int>(state.range(0)), 2);
  for (auto _ : state)
    benchmark::DoNotOptimize(resize_bilinear_vjp(cot, 64, 64));
}
BENCHMARK(BM_ResizeBilinearVjp)->Arg(224);

void BM_SampleCrop(benchmark::State& state) {
  Rng rng(3);
  CropConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(sample_crop(cfg, rng, 64, 64));
}
BENCHMARK(BM_SampleCrop);

void BM_ToyEmbed(benchmark::State& state) {
  const ToyEncoder enc(7, 64, 128, static_cast<int>(state.range(0)));
  const ImageTensor img = noise_image(64, 4);
  for (auto _ : state) benchmark::DoNotOptimize(embed(enc, img));
}
BENCHMARK(BM_ToyEmbed)->Arg(8)->Arg(32);

void BM_EnsembleGrad(benchmark::State& state) {
  const EncoderEnsemble ens = make_toy_ensemble(11);
  const ImageTensor a = noise_image(64, 5), b = noise_image(64, 6);
  for (auto _ : state)
    benchmark::DoNotOptimize(ensemble_similarity_and_grad(ens, a, b));
}
BENCHMARK(BM_EnsembleGrad);

void BM_AttackStep(benchmark::State& state) {
  const EncoderEnsemble ens = make_toy_ensemble(13);
  const ImageTensor clean = noise_image(64, 8), target = noise_image(64, 9);
  AttackConfig cfg;
  cfg.steps = 1;
  cfg.seed = 21;
  for (auto _ : state) {
    Rng rng(cfg.seed);
    benchmark::DoNotOptimize(run_attack(clean, target, cfg, ens, rng));
  }
}
BENCHMARK(BM_AttackStep);

}  // namespace

BENCHMARK_MAIN();
