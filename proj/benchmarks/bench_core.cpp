#include "cst/backbone.hpp"
#include "cst/cem.hpp"
#include "cst/losses.hpp"
#include "cst/metrics.hpp"
#include "cst/synth.hpp"

#include <benchmark/benchmark.h>
#include <torch/torch.h>

using namespace cst;

namespace {

torch::Tensor vessel_batch(int64_t n, int64_t size) {
  std::vector<torch::Tensor> imgs;
  for (int64_t i = 0; i < n; ++i) {
    const auto mask = synth::sample_vessel_tree(static_cast<uint64_t>(i), {}, size, size);
    imgs.push_back(synth::render(mask, synth::domain_b_style(), static_cast<uint64_t>(i)).tensor());
  }
  return torch::stack(imgs);
}

void BM_RidgeExtract(benchmark::State& state) {
  torch::set_num_threads(1);
  const cem::RidgeBackend backend;
  const auto batch = vessel_batch(4, state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(backend.extract_batch(batch));
  state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_RidgeExtract)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_GeneratorForward(benchmark::State& state) {
  torch::set_num_threads(1);
  torch::NoGradGuard no_grad;
  backbone::GeneratorSpec spec;
  spec.base_channels = static_cast<int>(state.range(0));
  spec.n_resblocks = 2;
  backbone::Generator g(spec);
  const auto x = torch::rand({4, 1, 64, 64}) * 2 - 1;
  for (auto _ : state) benchmark::DoNotOptimize(g->forward(x));
  state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_GeneratorForward)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_StructureLossBackward(benchmark::State& state) {
  torch::set_num_threads(1);
  const cem::RidgeBackend backend;
  const auto real = vessel_batch(4, 64);
  const auto m_r = backend.extract_batch(real).detach();
  for (auto _ : state) {
    auto fake = (real + 0.1 * torch::randn_like(real)).clamp(0, 1).requires_grad_(true);
    auto m_f = backend.extract_batch(fake);
    (loss::dice_loss(m_f, m_r, 1e-6) + loss::iou_loss(m_f, m_r, 1e-6)).backward();
    benchmark::DoNotOptimize(fake.grad());
  }
}
BENCHMARK(BM_StructureLossBackward)->Unit(benchmark::kMillisecond);

void BM_Ssim(benchmark::State& state) {
  const auto a = synth::render(synth::sample_vessel_tree(1, {}, state.range(0), state.range(0)), synth::domain_a_style(), 1);
  const auto b = synth::render(synth::sample_vessel_tree(1, {}, state.range(0), state.range(0)), synth::domain_b_style(), 1);
  for (auto _ : state) benchmark::DoNotOptimize(eval::ssim(a, b));
}
BENCHMARK(BM_Ssim)->Arg(64)->Arg(256);

void BM_Skeletonize(benchmark::State& state) {
  const auto mask = synth::sample_vessel_tree(2, {}, state.range(0), state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(eval::skeletonize(mask));
}
BENCHMARK(BM_Skeletonize)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
