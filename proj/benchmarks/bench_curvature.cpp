#include <benchmark/benchmark.h>

#include "blockhf/autodiff.hpp"
#include "blockhf/cg.hpp"
#include "blockhf/data.hpp"
#include "blockhf/models.hpp"
#include "blockhf/optimizer.hpp"
#include "blockhf/rng.hpp"

namespace {

struct AutoencoderFixture {
    blockhf::Graph graph;
    blockhf::ParamVector w;
    blockhf::Tensor x;
    blockhf::Binding binding;

    explicit AutoencoderFixture(std::size_t batch)
        : graph(blockhf::build_autoencoder(blockhf::autoencoder_spec({64, 32, 16, 8}))) {
        blockhf::Rng rng(3);
        w = blockhf::init_params(graph, rng);
        blockhf::Dataset ds = blockhf::synth_autoencoder_data(batch, 64, 8, 11);
        x = ds.inputs;
        binding.bind(graph.find_input("x"), x);
        binding.bind(graph.find_input("target"), x);
    }
};

void BM_AutoencoderGrad(benchmark::State& state) {
    AutoencoderFixture fix(static_cast<std::size_t>(state.range(0)));
    blockhf::EvalContext ctx(fix.graph);
    for (auto _ : state) {
        auto g = blockhf::grad(fix.graph, fix.binding, fix.w, ctx);
        benchmark::DoNotOptimize(g.data());
    }
}

void BM_AutoencoderGgnVp(benchmark::State& state) {
    AutoencoderFixture fix(static_cast<std::size_t>(state.range(0)));
    blockhf::EvalContext ctx(fix.graph);
    blockhf::forward(fix.graph, fix.binding, fix.w, ctx);
    blockhf::Rng rng(4);
    const blockhf::ParamVector v =
        blockhf::seeded_uniform({fix.graph.param_count()}, -1.0, 1.0, rng).data;
    for (auto _ : state) {
        auto gv = blockhf::ggn_vp_from_forward(fix.graph, v, ctx);
        benchmark::DoNotOptimize(gv.data());
    }
}

void BM_BlockCgSolve(benchmark::State& state) {
    AutoencoderFixture fix(64);
    const blockhf::BlockPartition part =
        blockhf::partition_preset(fix.graph, "autoencoder-2block");
    blockhf::EvalContext ctx(fix.graph);
    const blockhf::LinearOperator op = blockhf::damp(
        blockhf::make_block_operator(fix.graph, part, 0, fix.binding, fix.w, ctx), 0.01);
    const std::vector<double> g(op.dim, 0.01);
    const std::vector<double> x0(op.dim, 0.0);
    blockhf::CGConfig cfg;
    cfg.max_iters = static_cast<std::size_t>(state.range(0));
    cfg.stop.tol = 1e-12;
    for (auto _ : state) {
        auto res = blockhf::cg_solve(op, g, x0, cfg);
        benchmark::DoNotOptimize(res.x.data());
    }
}

}  // namespace

BENCHMARK(BM_AutoencoderGrad)->Arg(64)->Arg(512);
BENCHMARK(BM_AutoencoderGgnVp)->Arg(64)->Arg(512);
BENCHMARK(BM_BlockCgSolve)->Arg(10)->Arg(30);
