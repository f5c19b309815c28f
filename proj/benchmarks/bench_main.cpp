#include <benchmark/benchmark.h>

#include <random>

#include "asap/pipeline.hpp"
#include "asap/training.hpp"

using namespace asap;

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, bool grad = false) {
    Rng rng(seed);
    std::normal_distribution<double> normal;
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = normal(rng);
    return Tensor::from({rows, cols}, std::move(v), grad);
}

std::vector<DialogueSession> corpus(std::size_t n, std::size_t actions = 0) {
    SynthSpec spec;
    spec.num_dialogues = n;
    spec.persistence = 0.6;
    spec.num_actions = actions;
    return synthesize(spec);
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
    for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

static void BM_MatmulBackward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    auto a = random_matrix(n, n, 1, true);
    const auto b = random_matrix(n, n, 2);
    for (auto _ : state) {
        a.zero_grad();
        backward(sum(matmul(a, b)));
    }
}
BENCHMARK(BM_MatmulBackward)->Arg(64);

// Inference over one dialogue; the argument toggles the Hawkes head.
static void BM_Forward(benchmark::State& state) {
    const auto ds = corpus(32);
    auto cfg = ModelConfig::desk();
    cfg.hawkes = state.range(0) != 0;
    const auto est = make_estimator(cfg, {}, ds, 1);
    std::size_t i = 0;
    for (auto _ : state) benchmark::DoNotOptimize(est.predict(ds[i++ % ds.size()]));
}
BENCHMARK(BM_Forward)->Arg(0)->Arg(1);

static void BM_TrainStep(benchmark::State& state) {
    const auto ds = corpus(64, 4);
    auto cfg = ModelConfig::desk();
    cfg.num_actions = 4;
    cfg.gamma = 0.5;
    auto est = make_estimator(cfg, {}, ds, 1);
    Trainer trainer(est, TrainConfig{}, 1'000'000);
    std::vector<const DialogueSession*> batch;
    std::size_t i = 0;
    for (auto _ : state) {
        batch.clear();
        for (std::size_t k = 0; k < 8; ++k) batch.push_back(&ds[i++ % ds.size()]);
        benchmark::DoNotOptimize(trainer.step(batch));
    }
}
BENCHMARK(BM_TrainStep);

BENCHMARK_MAIN();
