// Serial reference vs OpenMP kernels.

#include <benchmark/benchmark.h>

#include <map>
#include <optional>
#include <vector>

#include "lrco/analysis.hpp"
#include "lrco/trainer.hpp"

using namespace lrco;

namespace {

struct Fixture {
    Benchmark bench;
    TrainConfig config;
    std::optional<Trainer> trainer;

    explicit Fixture(std::size_t unlabeled_batch) {
        BenchmarkSpec spec;
        bench = generate_shift_benchmark(spec);
        config.model.input_dim = spec.input_dim;
        config.model.num_classes = spec.num_classes;
        config.unlabeled_batch = unlabeled_batch;
        trainer.emplace(config, bench.source, bench.target);
        // Fill the bank so the contrastive denominators are full size.
        for (int s = 0; s < 60; ++s) trainer->step();
    }
};

Fixture& fixture(std::size_t batch) {
    static std::map<std::size_t, Fixture> cache;
    auto it = cache.find(batch);
    if (it == cache.end()) it = cache.try_emplace(batch, batch).first;
    return it->second;
}

void objective(benchmark::State& state, Execution exec) {
    Fixture& f = fixture(static_cast<std::size_t>(state.range(0)));
    const ObjectiveWeights w = f.config.weights();
    for (auto _ : state) {
        ObjectiveResult r = evaluate_objective(f.trainer->student(), f.trainer->last_batch(), w, exec);
        benchmark::DoNotOptimize(r.terms.total);
    }
    state.counters["bank"] = static_cast<double>(f.trainer->bank().size());
}

void similarity(benchmark::State& state, Execution exec) {
    SeededRng rng(3);
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    std::vector<Vector> features;
    std::vector<std::size_t> labels;
    std::vector<bool> confident;
    for (std::size_t i = 0; i < n; ++i) {
        Vector v(16);
        for (double& x : v) x = rng.normal();
        features.push_back(l2_normalize(v));
        labels.push_back(rng.uniform_index(5));
        confident.push_back(rng.uniform() < 0.7);
    }
    for (auto _ : state) {
        SimilarityReport r = similarity_stats(features, labels, confident, exec);
        benchmark::DoNotOptimize(r.all.within);
    }
}

}  // namespace

BENCHMARK_CAPTURE(objective, serial, Execution::serial)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK_CAPTURE(objective, parallel, Execution::parallel)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK_CAPTURE(similarity, serial, Execution::serial)->Arg(500)->Arg(2000)->Unit(benchmark::kMicrosecond);
BENCHMARK_CAPTURE(similarity, parallel, Execution::parallel)->Arg(500)->Arg(2000)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
