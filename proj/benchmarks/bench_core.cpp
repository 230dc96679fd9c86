#include <benchmark/benchmark.h>

#include <map>

#include "fedguard/attack.hpp"
#include "fedguard/data.hpp"
#include "fedguard/federation.hpp"
#include "fedguard/model.hpp"
#include "fedguard/nn.hpp"

using namespace fedguard;

namespace {

ModelSpec spec_for(int which) { return which == 0 ? small_mlp() : paper_cnn(); }

Batch make_batch(const ModelSpec& spec, std::size_t n) {
  Rng rng(1);
  const Dataset ds = synthetic_dataset(std::max<std::size_t>(n, spec.classes), spec.classes, rng);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return gather_batch(ds.images, ds.labels, idx);
}

void BM_Forward(benchmark::State& state) {
  const ModelSpec spec = spec_for(static_cast<int>(state.range(0)));
  Rng rng(2);
  const ModelParams p = init_params(spec, rng);
  const Batch batch = make_batch(spec, static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(forward(spec, p, batch.inputs));
  state.SetItemsProcessed(state.iterations() * state.range(1));
  state.SetLabel(state.range(0) == 0 ? "small_mlp" : "paper_cnn");
}
BENCHMARK(BM_Forward)->Args({0, 124})->Args({1, 32})->Unit(benchmark::kMillisecond);

void BM_LossAndGrad(benchmark::State& state) {
  const ModelSpec spec = spec_for(static_cast<int>(state.range(0)));
  Rng rng(2);
  const ModelParams p = init_params(spec, rng);
  const Batch batch = make_batch(spec, static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_grad(spec, p, batch));
  state.SetItemsProcessed(state.iterations() * state.range(1));
  state.SetLabel(state.range(0) == 0 ? "small_mlp" : "paper_cnn");
}
BENCHMARK(BM_LossAndGrad)->Args({0, 124})->Args({1, 32})->Unit(benchmark::kMillisecond);

void BM_Aggregate(benchmark::State& state) {
  const ModelSpec spec = spec_for(static_cast<int>(state.range(0)));
  std::map<ClientId, ModelParams> updates;
  std::map<ClientId, std::size_t> counts;
  for (ClientId c = 0; c < 10; ++c) {
    Rng rng(c);
    updates.emplace(c, init_params(spec, rng));
    counts[c] = 100 + c;
  }
  for (auto _ : state) benchmark::DoNotOptimize(aggregate(updates, counts));
  state.SetLabel(state.range(0) == 0 ? "small_mlp, 10 clients" : "paper_cnn, 10 clients");
}
BENCHMARK(BM_Aggregate)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_AnomalyScores(benchmark::State& state) {
  std::map<ClientId, double> losses;
  for (ClientId c = 0; c < static_cast<ClientId>(state.range(0)); ++c) losses[c] = 0.1 + 0.01 * static_cast<double>(c);
  for (auto _ : state) {
    const AnomalyScores a = anomaly_scores(losses);
    benchmark::DoNotOptimize(flag_anomalous(a.scores, threshold(a.scores, ThresholdRule::median)));
  }
}
BENCHMARK(BM_AnomalyScores)->Arg(10)->Arg(1000);

void BM_FirstLayerNoise(benchmark::State& state) {
  const ModelSpec spec = paper_cnn();
  Rng rng(3);
  const ModelParams p = init_params(spec, rng);
  const AttackSpec attack{.targets = {1}, .kind = FirstLayerNoise{1.0}, .seed = 0};
  for (auto _ : state) benchmark::DoNotOptimize(inject(p, 1, 1, attack));
}
BENCHMARK(BM_FirstLayerNoise)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
