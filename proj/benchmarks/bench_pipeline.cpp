#include <benchmark/benchmark.h>

#include "scdsc/trainer.hpp"

namespace {

struct Fixture {
  scdsc::TrainConfig config;
  scdsc::PreparedRun prepared;

  Fixture() {
    config.clusters = 4;
    config.pretrain_epochs = 1;
    prepared = scdsc::prepare_run(scdsc::synth_scene({}), config);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_ComputeTargets(benchmark::State& state) {
  const Fixture& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(scdsc::compute_targets(f.prepared.initial, f.prepared.data));
}
BENCHMARK(BM_ComputeTargets)->Unit(benchmark::kMillisecond);

void BM_EvaluateLosses(benchmark::State& state) {
  const Fixture& f = fixture();
  scdsc::JointTrainer trainer(f.prepared.initial, f.prepared.data, f.config);
  const scdsc::Targets targets = scdsc::compute_targets(trainer.model(), f.prepared.data);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.evaluate_losses(targets));
}
BENCHMARK(BM_EvaluateLosses)->Unit(benchmark::kMillisecond);

void BM_TrainEpoch(benchmark::State& state) {
  const Fixture& f = fixture();
  scdsc::TrainConfig config = f.config;
  config.batch_mode = state.range(0) == 0 ? scdsc::BatchMode::full : scdsc::BatchMode::mini;
  config.batch_size = static_cast<std::size_t>(state.range(0));
  scdsc::JointTrainer trainer(f.prepared.initial, f.prepared.data, config);
  const scdsc::Targets targets = scdsc::compute_targets(trainer.model(), f.prepared.data);
  int epoch = 0;
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_epoch(targets, ++epoch));
}
BENCHMARK(BM_TrainEpoch)->Arg(0)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace
