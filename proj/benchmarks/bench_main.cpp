#include <benchmark/benchmark.h>

#include "resmtl/data.hpp"
#include "resmtl/matrix.hpp"
#include "resmtl/network.hpp"
#include "resmtl/optim.hpp"
#include "resmtl/rng.hpp"

using namespace resmtl;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.normal();
  return m;
}

LossSettings settings_for(const Dataset& ds) {
  LossSettings s;
  s.num_classes = ds.vocab.class_counts();
  s.assignment = default_loss_assignment(s.num_classes);
  return s;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  auto a = random_matrix(n, n, rng);
  auto b = random_matrix(n, n, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128)->Arg(512);

void BM_ForwardBackward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto hidden = static_cast<std::size_t>(state.range(1));
  SynthSpec spec;
  spec.samples = batch;
  spec.feature_dim = 256;
  const Dataset ds = normalize_targets(synth_generate(spec, 3));
  const auto s = settings_for(ds);
  Rng rng(3);
  MultiTaskNet net(make_net_config(ds.feature_dim, hidden, 0.2, s.num_classes, s.assignment), rng);
  std::vector<std::size_t> idx(batch);
  for (std::size_t i = 0; i < batch; ++i) idx[i] = i;
  const Matrix x = batch_features(ds, idx);
  const BatchTargets targets = batch_targets(ds, idx);
  const auto weights = TaskWeights::uniform(1.0);
  for (auto _ : state) {
    auto fwd = forward(net, x, Mode::train, rng);
    auto bundle = compute_task_losses(fwd.outputs, targets, s);
    benchmark::DoNotOptimize(backward(net, fwd.cache, weighted_head_grads(bundle, weights)));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_ForwardBackward)->Args({32, 128})->Args({32, 512});

void BM_TrainEpoch(benchmark::State& state) {
  SynthSpec spec;
  spec.samples = static_cast<std::size_t>(state.range(0));
  const Dataset ds = normalize_targets(synth_generate(spec, 4));
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 32;
  cfg.losses = settings_for(ds);
  Rng rng(4);
  MultiTaskNet net(make_net_config(ds.feature_dim, 128, 0.2, cfg.losses.num_classes,
                                   cfg.losses.assignment),
                   rng);
  for (auto _ : state) benchmark::DoNotOptimize(train(net, ds, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainEpoch)->Arg(512)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
