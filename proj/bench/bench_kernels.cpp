// Serial vs OpenMP timings for the hot kernels.

#include <benchmark/benchmark.h>

#include <random>

#include "qpm/conformal.hpp"
#include "qpm/kernels.hpp"
#include "qpm/scenario.hpp"

namespace {

std::vector<double> noise(std::size_t n) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> d;
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

void matmul_args(benchmark::internal::Benchmark* b) {
    for (int m : {64, 512}) b->Args({m, 256, 256});
}

template <qpm::Exec E>
void BM_matmul(benchmark::State& state) {
    const auto m = static_cast<std::size_t>(state.range(0)), k = static_cast<std::size_t>(state.range(1)),
               n = static_cast<std::size_t>(state.range(2));
    const auto a = noise(m * k), b = noise(k * n);
    std::vector<double> c(m * n);
    for (auto _ : state) {
        qpm::kernels::matmul(a, b, c, m, k, n, E);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * m * k * n));
}

void BM_matmul_reference(benchmark::State& state) {
    const auto m = static_cast<std::size_t>(state.range(0)), k = static_cast<std::size_t>(state.range(1)),
               n = static_cast<std::size_t>(state.range(2));
    const auto a = noise(m * k), b = noise(k * n);
    std::vector<double> c(m * n);
    for (auto _ : state) {
        qpm::kernels::reference::matmul(a, b, c, m, k, n);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * m * k * n));
}

template <qpm::Exec E>
void BM_simulate(benchmark::State& state) {
    const qpm::Scenario sc(qpm::ScenarioId::navigation);
    for (auto _ : state) benchmark::DoNotOptimize(sc.simulate(qpm::State{3, 3}, 1000, 7, E));
}

template <qpm::Exec E>
void BM_robustness(benchmark::State& state) {
    const qpm::Scenario sc(qpm::ScenarioId::signal);
    const auto batch = sc.simulate(qpm::State{12.5}, 2000, 3);
    const auto f = sc.default_property();
    for (auto _ : state) benchmark::DoNotOptimize(qpm::stl::robustness_batch(f, batch, E));
}

template <qpm::Exec E>
void BM_calibration(benchmark::State& state) {
    const qpm::Scenario sc(qpm::ScenarioId::signal);
    const auto train = qpm::generate_split(sc, qpm::Split::train, 1000, 1, 1);
    const auto cal = qpm::generate_split(sc, qpm::Split::calibration, 50, 100, 1);
    const qpm::ResampleSurrogate sur(train, 100);
    const qpm::ExactPredictor pred(sc);
    const auto f = sc.default_property();
    for (auto _ : state) benchmark::DoNotOptimize(qpm::calibration_table(sur, pred, cal, f, 0.1, 100, 3, E));
}

}  // namespace

BENCHMARK(BM_matmul_reference)->Apply(matmul_args);
BENCHMARK(BM_matmul<qpm::Exec::serial>)->Apply(matmul_args);
BENCHMARK(BM_matmul<qpm::Exec::parallel>)->Apply(matmul_args);
BENCHMARK(BM_simulate<qpm::Exec::serial>);
BENCHMARK(BM_simulate<qpm::Exec::parallel>);
BENCHMARK(BM_robustness<qpm::Exec::serial>);
BENCHMARK(BM_robustness<qpm::Exec::parallel>);

BENCHMARK(BM_calibration<qpm::Exec::serial>);
BENCHMARK(BM_calibration<qpm::Exec::parallel>);

BENCHMARK_MAIN();
