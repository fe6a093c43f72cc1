#include <benchmark/benchmark.h>

#include "debias/model.hpp"

using namespace debias;

static void BM_linear_forward(benchmark::State& state) {
    SeededRng rng(11);
    const LinearClassifier model = make_linear(state.range(0), 3, rng);
    Vector x(state.range(0));
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(forward(model, x));
    }
}
BENCHMARK(BM_linear_forward)->Arg(23)->Arg(128);

static void BM_mlp_forward(benchmark::State& state) {
    SeededRng rng(12);
    const MlpClassifier model = make_mlp(state.range(0), {32, 16}, 3, rng);
    Vector x(state.range(0));
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(forward(model, x));
    }
}
BENCHMARK(BM_mlp_forward)->Arg(23)->Arg(128);

static void BM_mlp_backward(benchmark::State& state) {
    SeededRng rng(13);
    const MlpClassifier model = make_mlp(state.range(0), {32, 16}, 3, rng);
    Vector x(state.range(0));
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    const Vector d_logits{0.4, -0.9, 0.5};
    for (auto _ : state) {
        benchmark::DoNotOptimize(backward(model, x, d_logits));
    }
}
BENCHMARK(BM_mlp_backward)->Arg(23)->Arg(128);
