#include <benchmark/benchmark.h>

#include "debias/data.hpp"
#include "debias/trainer.hpp"

using namespace debias;

namespace {

GeneratedSplits small_data() {
    BiasConfig cfg;
    cfg.num_labels = 3;
    cfg.signal_dim = 20;
    cfg.bias_dims = {3};
    cfg.bias_strengths = {0.9};
    cfg.signal_noise = 0.75;
    cfg.train_size = 1000;
    cfg.dev_size = 10;
    cfg.test_indomain_size = 10;
    cfg.test_ood_size = 9;
    cfg.seed = 3;
    return generate(cfg);
}

}  // namespace

static void BM_train_epoch(benchmark::State& state) {
    const GeneratedSplits splits = small_data();
    const LossKind kind = static_cast<LossKind>(state.range(0));
    for (auto _ : state) {
        TrainConfig cfg;
        cfg.loss.kind = kind;
        cfg.epochs = 1;
        cfg.batch_size = 32;
        cfg.learning_rate = 0.15;
        cfg.seed = 1;
        if (kind != LossKind::CE) cfg.branch_inputs = {BiasExtractor{}};
        benchmark::DoNotOptimize(
            run_training(splits.train, nullptr, nullptr, ModelConfig{}, cfg));
    }
}
BENCHMARK(BM_train_epoch)
    ->Arg(static_cast<int>(LossKind::CE))
    ->Arg(static_cast<int>(LossKind::PoE))
    ->Arg(static_cast<int>(LossKind::DFL))
    ->Unit(benchmark::kMillisecond);

static void BM_generate(benchmark::State& state) {
    for (auto _ : state) {
        benchmark::DoNotOptimize(small_data());
    }
}
BENCHMARK(BM_generate)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
