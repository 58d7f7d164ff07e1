#include <benchmark/benchmark.h>

#include "blockhf/rng.hpp"
#include "blockhf/tensor.hpp"

namespace {

void BM_GemmNN(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    blockhf::Rng rng(1);
    const blockhf::Tensor a = blockhf::seeded_uniform({n, n}, -1.0, 1.0, rng);
    const blockhf::Tensor b = blockhf::seeded_uniform({n, n}, -1.0, 1.0, rng);
    std::vector<double> c(n * n, 0.0);
    for (auto _ : state) {
        std::fill(c.begin(), c.end(), 0.0);
        blockhf::kern::gemm_nn_acc(a.data.data(), b.data.data(), c.data(), n, n, n);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                            static_cast<std::int64_t>(2 * n * n * n));
}

void BM_Dot(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    blockhf::Rng rng(2);
    const blockhf::Tensor u = blockhf::seeded_uniform({n}, -1.0, 1.0, rng);
    const blockhf::Tensor v = blockhf::seeded_uniform({n}, -1.0, 1.0, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(blockhf::dot(u, v));
    }
}

}  // namespace

BENCHMARK(BM_GemmNN)->Arg(64)->Arg(256);
BENCHMARK(BM_Dot)->Arg(1 << 12)->Arg(1 << 16);

BENCHMARK_MAIN();
