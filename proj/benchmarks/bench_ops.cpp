#include <random>

#include <benchmark/benchmark.h>

#include "patchda/config.hpp"
#include "patchda/data.hpp"
#include "patchda/model.hpp"
#include "patchda/ops.hpp"
#include "patchda/sampler.hpp"

namespace {

using patchda::Tensor;

Tensor random_tensor(patchda::Shape shape, std::uint64_t seed, float lo = -1, float hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(patchda::shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

void BM_CropPatches(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Tensor frames = random_tensor({n, 3, 64, 64}, 1);
  const Tensor centers = random_tensor({n, 2}, 2, 0.05f, 0.95f);
  for (auto _ : state) {
    Tensor p = patchda::sampler::crop_patches(frames, centers, 24);
    Tensor loss = patchda::ops::sum(p);
    loss.backward();
    benchmark::DoNotOptimize(p.values().data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_CropPatches)->Arg(8)->Arg(48);

void BM_Conv2d(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Tensor x = random_tensor({n, 8, 32, 32}, 3);
  const Tensor w = random_tensor({16, 8, 3, 3}, 4);
  const Tensor b = random_tensor({16}, 5);
  for (auto _ : state) {
    Tensor y = patchda::ops::conv2d(x, w, b, 2, 1);
    patchda::ops::sum(y).backward();
    benchmark::DoNotOptimize(y.values().data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_Conv2d)->Arg(8)->Arg(48);

void BM_ExtractorForward(benchmark::State& state) {
  patchda::Config config;
  const patchda::ActionModel model(config);
  std::vector<patchda::data::Clip> clips;
  for (int i = 0; i < 8; ++i)
    clips.push_back(patchda::data::render_clip(config.data, patchda::data::Domain::Source,
                                               patchda::data::Split::Train, i));
  std::vector<const patchda::data::Clip*> ptrs;
  for (const auto& c : clips) ptrs.push_back(&c);
  const auto batch = patchda::streams::make_batch(ptrs, config.model);
  for (auto _ : state) {
    patchda::NoGradGuard no_grad;
    auto out = model.extractor().forward(batch);
    benchmark::DoNotOptimize(out.features.e.values().data());
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_ExtractorForward);

}  // namespace

BENCHMARK_MAIN();
