#include <benchmark/benchmark.h>

#include "debias/losses.hpp"
#include "debias/math.hpp"

using namespace debias;

namespace {

Vector random_logits(SeededRng& rng, std::size_t dim) {
    Vector v(dim);
    for (double& x : v) x = rng.uniform(-5.0, 5.0);
    return v;
}

}  // namespace

static void BM_log_softmax(benchmark::State& state) {
    SeededRng rng(1);
    const Vector logits = random_logits(rng, state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(log_softmax(logits));
    }
}
BENCHMARK(BM_log_softmax)->Arg(3)->Arg(16)->Arg(128);

static void BM_poe_loss(benchmark::State& state) {
    SeededRng rng(2);
    const Vector base = random_logits(rng, state.range(0));
    const Vector bias = random_logits(rng, state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(poe_loss(base, bias, 0, 1.0));
    }
}
BENCHMARK(BM_poe_loss)->Arg(3)->Arg(16);

static void BM_dfl_loss(benchmark::State& state) {
    SeededRng rng(3);
    const Vector base = random_logits(rng, state.range(0));
    const Vector bias = random_logits(rng, state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(dfl_loss(base, bias, 0, 2.0));
    }
}
BENCHMARK(BM_dfl_loss)->Arg(3)->Arg(16);

static void BM_rubi_loss(benchmark::State& state) {
    SeededRng rng(4);
    const Vector base = random_logits(rng, state.range(0));
    const Vector bias = random_logits(rng, state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(rubi_loss(base, bias, 0));
    }
}
BENCHMARK(BM_rubi_loss)->Arg(3)->Arg(16);

static void BM_batch_loss(benchmark::State& state) {
    SeededRng rng(5);
    LossSpec spec;
    spec.kind = LossKind::JointPoE;
    std::vector<BatchItem> batch;
    for (int i = 0; i < 32; ++i) {
        BatchItem item;
        item.base_logits = random_logits(rng, 3);
        item.bias_logits = {random_logits(rng, 3), random_logits(rng, 3)};
        item.label = rng.uniform_int(3);
        batch.push_back(std::move(item));
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(batch_loss(spec, batch));
    }
}
BENCHMARK(BM_batch_loss);
