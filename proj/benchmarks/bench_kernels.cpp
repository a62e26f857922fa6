#include "bdb/attacks/triggers.hpp"
#include "bdb/attacks/wanet.hpp"
#include "bdb/dataset.hpp"
#include "bdb/defenses/detection.hpp"
#include "bdb/eval/analysis.hpp"
#include "bdb/models.hpp"
#include "bdb/training.hpp"

#include <benchmark/benchmark.h>

#include <numeric>

using namespace bdb;

namespace {

torch::Tensor images(int64_t n) {
  std::vector<int64_t> ids(static_cast<size_t>(n));
  std::iota(ids.begin(), ids.end(), int64_t{0});
  return synthetic_images("train", ids, 0);
}

void BM_SyntheticImages(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(images(state.range(0)));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SyntheticImages)->Arg(256);

void BM_BadNets(benchmark::State& state) {
  auto x = images(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(attacks::apply_badnets(x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BadNets)->Arg(256);

void BM_Blended(benchmark::State& state) {
  auto x = images(state.range(0));
  auto p = attacks::procedural_blend_pattern({32, 32, 3});
  for (auto _ : state) benchmark::DoNotOptimize(attacks::apply_blended(x, p, 0.2));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Blended)->Arg(256);

void BM_WanetWarp(benchmark::State& state) {
  auto x = images(state.range(0));
  auto field = attacks::WarpField::random({32, 32, 3}, 4, 0.5, 1);
  for (auto _ : state) benchmark::DoNotOptimize(attacks::wanet_warp(x, field));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_WanetWarp)->Arg(256);

void BM_SmallCnnForward(benchmark::State& state) {
  torch::manual_seed(0);
  auto model = make_classifier({Arch::SmallCNN, 10, {32, 32, 3}});
  auto x = images(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(predict_logits(model, x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SmallCnnForward)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_SpectralScores(benchmark::State& state) {
  torch::manual_seed(0);
  auto f = torch::randn({state.range(0), 128}, torch::kFloat64);
  for (auto _ : state) benchmark::DoNotOptimize(defenses::spectral_scores(f));
}
BENCHMARK(BM_SpectralScores)->Arg(1000)->Arg(5000);

void BM_TwoMeans(benchmark::State& state) {
  torch::manual_seed(0);
  auto f = torch::randn({state.range(0), 10}, torch::kFloat64);
  std::vector<int64_t> ids(static_cast<size_t>(state.range(0)));
  std::iota(ids.begin(), ids.end(), int64_t{0});
  for (auto _ : state) benchmark::DoNotOptimize(defenses::two_means(f, ids));
}
BENCHMARK(BM_TwoMeans)->Arg(1000)->Arg(5000);

void BM_ShapleySample(benchmark::State& state) {
  auto value = [](const torch::Tensor& c) { return c.to(torch::kFloat64).sum(1); };
  for (auto _ : state) benchmark::DoNotOptimize(eval::shapley_sample(value, 16, state.range(0), 0));
}
BENCHMARK(BM_ShapleySample)->Arg(100);

}  // namespace

BENCHMARK_MAIN();
