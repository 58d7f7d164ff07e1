#include <doctest.h>

#include <cmath>

#include "blockhf/autodiff.hpp"
#include "blockhf/models.hpp"
#include "blockhf/optimizer.hpp"
#include "blockhf/rng.hpp"
#include "blockhf/tensor.hpp"

using namespace blockhf;

namespace {

struct SmallNet {
    Graph graph;
    Tensor x, y;

    Binding binding() const {
        Binding b;
        b.bind(graph.find_input("x"), x);
        b.bind(graph.find_input("y"), y);
        return b;
    }
};

SmallNet make_small_net(Rng& rng, int batch = 5) {
    GraphBuilder b;
    const int x = b.input("x", 4);
    const int y = b.input("y", 3);
    const int w1 = b.param("W1", 4, 5);
    const int b1 = b.param("b1", 1, 5);
    const int h = b.tanh(b.add(b.matmul(x, w1), b1));
    const int w2 = b.param("W2", 5, 3);
    const int b2 = b.param("b2", 1, 3);
    const int z = b.add(b.matmul(h, w2), b2);
    b.set_output(z);
    b.set_loss(b.mse_loss(z, y));

    SmallNet net{b.finish(), {}, {}};
    net.x = seeded_uniform({static_cast<std::size_t>(batch), 4}, -1.0, 1.0, rng);
    net.y = seeded_uniform({static_cast<std::size_t>(batch), 3}, 0.0, 1.0, rng);
    return net;
}

std::vector<double> dense_ggn(const Graph& g, const Binding& bind, const ParamVector& w) {
    EvalContext ctx(g);
    forward(g, bind, w, ctx);
    const std::size_t p = g.param_count();
    std::vector<double> dense(p * p, 0.0);
    ParamVector e(p, 0.0);
    for (std::size_t j = 0; j < p; ++j) {
        e[j] = 1.0;
        const ParamVector col = ggn_vp_from_forward(g, e, ctx);
        for (std::size_t i = 0; i < p; ++i) dense[i * p + j] = col[i];
        e[j] = 0.0;
    }
    return dense;
}

}  // namespace

TEST_CASE("partition presets cover every leaf disjointly") {
    const Graph ae = build_autoencoder(autoencoder_spec({8, 4, 2}));
    const BlockPartition two = partition_preset(ae, "autoencoder-2block");
    REQUIRE(two.count() == 2);
    CHECK(two.blocks[0].name == "encoder");
    CHECK(two.blocks[1].name == "decoder");
    CHECK(two.blocks[0].size + two.blocks[1].size == ae.param_count());

    const BlockPartition one = partition_preset(ae, "single");
    REQUIRE(one.count() == 1);
    CHECK(one.blocks[0].size == ae.param_count());

    const Graph lstm = build_stacked_lstm(lstm_spec(3, 4, 1, 5, 6));
    const BlockPartition three = partition_preset(lstm, "lstm-3block");
    REQUIRE(three.count() == 3);
    std::size_t total = 0;
    for (const auto& blk : three.blocks) total += blk.size;
    CHECK(total == lstm.param_count());
    // head rides with the top layer
    bool head_in_top = false;
    for (const std::string& leaf : three.blocks[2].leaves) {
        if (leaf == "head.W") head_in_top = true;
    }
    CHECK(head_in_top);

    CHECK_THROWS_AS(partition_preset(ae, "lstm-3block"), ConfigError);
    CHECK_THROWS_AS(partition_preset(ae, "fourblock"), ConfigError);
}

TEST_CASE("partitions reject duplicated or missing leaves") {
    const Graph ae = build_autoencoder(autoencoder_spec({4, 2}));
    CHECK_THROWS_AS(
        make_partition(ae, {{"a", {"enc1.W", "enc1.W"}}, {"b", {"enc1.b"}}}),
        ConfigError);
    CHECK_THROWS_AS(make_partition(ae, {{"a", {"enc1.W", "enc1.b"}}}), ConfigError);
}

TEST_CASE("scatter and gather round trip block vectors") {
    const Graph ae = build_autoencoder(autoencoder_spec({5, 3}));
    const BlockPartition part = partition_preset(ae, "autoencoder-2block");
    Rng rng(3);
    ParamVector full(ae.param_count(), 0.0);
    for (std::size_t b = 0; b < part.count(); ++b) {
        std::vector<double> vb(part.blocks[b].size);
        for (double& v : vb) v = rng.uniform(-1.0, 1.0);
        part.scatter(b, vb, full);
        std::vector<double> back(part.blocks[b].size, 0.0);
        part.gather(b, full, back);
        CHECK(back == vb);
    }
}

TEST_CASE("single-block operator matches full ggn_vp") {
    Rng rng(11);
    SmallNet net = make_small_net(rng);
    const Binding bind = net.binding();
    ParamVector w(net.graph.param_count());
    for (double& v : w) v = rng.uniform(-0.5, 0.5);

    const BlockPartition part = partition_preset(net.graph, "single");
    EvalContext opctx(net.graph);
    const LinearOperator op = make_block_operator(net.graph, part, 0, bind, w, opctx);
    REQUIRE(op.dim == net.graph.param_count());

    EvalContext ctx(net.graph);
    for (int trial = 0; trial < 5; ++trial) {
        ParamVector v(w.size());
        for (double& c : v) c = rng.uniform(-1.0, 1.0);
        std::vector<double> got(w.size(), 0.0);
        op.apply(v, got);
        const ParamVector want = ggn_vp(net.graph, bind, w, v, ctx);
        for (std::size_t i = 0; i < w.size(); ++i) {
            CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-14));
        }
    }
}

TEST_CASE("block operators equal dense GGN diagonal blocks") {
    Rng rng(13);
    SmallNet net = make_small_net(rng);
    const Binding bind = net.binding();
    ParamVector w(net.graph.param_count());
    for (double& v : w) v = rng.uniform(-0.5, 0.5);
    const std::vector<double> dense = dense_ggn(net.graph, bind, w);
    const std::size_t p = net.graph.param_count();

    const BlockPartition part = make_partition(
        net.graph, {{"layer1", {"W1", "b1"}}, {"layer2", {"W2", "b2"}}});
    for (std::size_t b = 0; b < 2; ++b) {
        EvalContext ctx(net.graph);
        const LinearOperator op = make_block_operator(net.graph, part, b, bind, w, ctx);
        const std::size_t nb = part.blocks[b].size;
        for (int trial = 0; trial < 4; ++trial) {
            std::vector<double> vb(nb);
            for (double& v : vb) v = rng.uniform(-1.0, 1.0);
            std::vector<double> got(nb, 0.0);
            op.apply(vb, got);

            ParamVector vfull(p, 0.0), wantfull(p, 0.0);
            part.scatter(b, vb, vfull);
            for (std::size_t i = 0; i < p; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < p; ++j) s += dense[i * p + j] * vfull[j];
                wantfull[i] = s;
            }
            std::vector<double> want(nb, 0.0);
            part.gather(b, wantfull, want);
            for (std::size_t i = 0; i < nb; ++i) {
                CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
            }
        }
    }

    EvalContext ctx(net.graph);
    const LinearOperator op = make_block_operator(net.graph, part, 0, bind, w, ctx);
    std::vector<double> wrong_in(3, 0.0), wrong_out(3, 0.0);
    CHECK_THROWS_AS(op.apply(wrong_in, wrong_out), ShapeError);
    CHECK_THROWS_AS(make_block_operator(net.graph, part, 7, bind, w, ctx), ShapeError);
}

TEST_CASE("warm start stores raw CG solutions and scales them by 0.95") {
    Rng rng(17);
    SmallNet net = make_small_net(rng);
    Binding bind = net.binding();
    const BlockPartition part = partition_preset(net.graph, "single");

    TrainerState state;
    state.w.assign(net.graph.param_count(), 0.0);
    Rng wrng(18);
    for (double& v : state.w) v = wrng.uniform(-0.5, 0.5);

    HFWorkspace ws(net.graph, 1);
    HFConfig cfg;
    cfg.alpha = 0.3;
    cfg.cg.max_iters = 10;
    cfg.cg.damping = 0.05;
    block_hf_step(state, net.graph, part, bind, net.x.rows(), cfg, ws);
    const std::vector<double> first = state.prev_block_solutions[0];
    CHECK(first.size() == net.graph.param_count());

    const ParamVector w_before = state.w;
    cfg.cg.max_iters = 0;
    const StepDiagnostics diag =
        block_hf_step(state, net.graph, part, bind, net.x.rows(), cfg, ws);
    CHECK(diag.blocks[0].cg_iterations == 0);
    for (std::size_t i = 0; i < first.size(); ++i) {
        CHECK(state.prev_block_solutions[0][i] == 0.95 * first[i]);
        CHECK(state.w[i] == w_before[i] + cfg.alpha * (0.95 * first[i]));
    }
}

TEST_CASE("block step on a block-diagonal quadratic equals the full step") {
    // Diagonal quadratic: G is diagonal, so any block split is exact.
    const std::size_t n = 6;
    Rng rng(19);
    std::vector<double> diag_entries(n);
    for (double& v : diag_entries) v = rng.uniform(0.5, 3.0);

    GraphBuilder b;
    const int w1 = b.param("wa", 1, 3);
    const int w2 = b.param("wb", 1, 3);
    const int wfull = b.concat_cols(w1, w2);
    std::vector<double> c(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) c[i * n + i] = std::sqrt(diag_entries[i]);
    const int cc = b.constant(static_cast<int>(n), static_cast<int>(n), c);
    const int z = b.matmul(wfull, cc);
    std::vector<double> target(n, 0.3);
    const int y = b.constant(1, static_cast<int>(n), target);
    b.set_output(z);
    b.set_loss(b.mse_loss(z, y));
    const Graph g = b.finish();

    HFConfig cfg;
    cfg.alpha = 1.0;
    cfg.cg.max_iters = n;
    cfg.cg.stop.tol = 1e-13;

    TrainerState split_state, full_state;
    split_state.w.assign(n, 0.1);
    full_state.w.assign(n, 0.1);

    const BlockPartition split = make_partition(g, {{"a", {"wa"}}, {"b", {"wb"}}});
    const BlockPartition single = partition_preset(g, "single");
    HFWorkspace ws2(g, 2), ws1(g, 1);
    block_hf_step(split_state, g, split, {}, 1, cfg, ws2);
    block_hf_step(full_state, g, single, {}, 1, cfg, ws1);
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(split_state.w[i] == doctest::Approx(full_state.w[i]).epsilon(1e-10));
    }
}

TEST_CASE("parallel and serial block solves agree bitwise") {
    Rng rng(23);
    SmallNet net = make_small_net(rng, 6);
    Binding bind = net.binding();
    const BlockPartition part = make_partition(
        net.graph, {{"layer1", {"W1", "b1"}}, {"layer2", {"W2", "b2"}}});

    ParamVector w0(net.graph.param_count());
    for (double& v : w0) v = rng.uniform(-0.5, 0.5);

    HFConfig cfg;
    cfg.alpha = 0.2;
    cfg.cg.max_iters = 15;
    cfg.cg.damping = 0.01;

    TrainerState serial, parallel;
    serial.w = w0;
    parallel.w = w0;
    HFWorkspace ws_s(net.graph, 2), ws_p(net.graph, 2);

    for (int k = 0; k < 3; ++k) {
        cfg.parallel_blocks = false;
        block_hf_step(serial, net.graph, part, bind, 4, cfg, ws_s);
        cfg.parallel_blocks = true;
        block_hf_step(parallel, net.graph, part, bind, 4, cfg, ws_p);
    }
    CHECK(serial.w == parallel.w);
    CHECK(serial.prev_block_solutions == parallel.prev_block_solutions);
}

TEST_CASE("per-block q never exceeds the warm-start value") {
    Rng rng(29);
    SmallNet net = make_small_net(rng);
    Binding bind = net.binding();
    const BlockPartition part = make_partition(
        net.graph, {{"layer1", {"W1", "b1"}}, {"layer2", {"W2", "b2"}}});
    TrainerState state;
    state.w.assign(net.graph.param_count(), 0.0);
    for (double& v : state.w) v = rng.uniform(-0.5, 0.5);
    HFWorkspace ws(net.graph, 2);
    HFConfig cfg;
    cfg.alpha = 0.5;
    cfg.cg.max_iters = 12;
    cfg.cg.damping = 0.02;
    for (int k = 0; k < 5; ++k) {
        const StepDiagnostics diag =
            block_hf_step(state, net.graph, part, bind, 5, cfg, ws);
        for (const BlockStepInfo& info : diag.blocks) {
            CHECK(info.q_final <= info.q_start + 1e-12);
        }
    }
}

TEST_CASE("curvature batch must be a nonempty prefix of the gradient batch") {
    Rng rng(31);
    SmallNet net = make_small_net(rng);
    Binding bind = net.binding();
    const BlockPartition part = partition_preset(net.graph, "single");
    TrainerState state;
    state.w.assign(net.graph.param_count(), 0.1);
    HFWorkspace ws(net.graph, 1);
    HFConfig cfg;
    CHECK_THROWS_AS(block_hf_step(state, net.graph, part, bind, 99, cfg, ws), ShapeError);
    CHECK_THROWS_AS(block_hf_step(state, net.graph, part, bind, 0, cfg, ws), ShapeError);
}

TEST_CASE("non-finite parameters abort the step with diagnostics") {
    Rng rng(37);
    SmallNet net = make_small_net(rng);
    Binding bind = net.binding();
    const BlockPartition part = partition_preset(net.graph, "single");
    TrainerState state;
    state.w.assign(net.graph.param_count(), 0.1);
    state.w[0] = std::numeric_limits<double>::quiet_NaN();
    HFWorkspace ws(net.graph, 1);
    HFConfig cfg;
    CHECK_THROWS_AS(block_hf_step(state, net.graph, part, bind, 5, cfg, ws), NumericError);
}

TEST_CASE("adam first step moves by -lr * sign(g)") {
    TrainerState state;
    state.w.assign(4, 0.0);
    const ParamVector g = {2.0, -3.5, 1.0, -8.0};
    AdamConfig cfg;
    adam_step(state, g, cfg);
    CHECK(state.adam_t == 1);
    for (std::size_t i = 0; i < 4; ++i) {
        const double want = -cfg.lr * (g[i] > 0 ? 1.0 : -1.0);
        CHECK(std::abs(state.w[i] - want) <= cfg.lr * 1e-6);
    }
}

TEST_CASE("adam is a fixed point at zero gradient") {
    TrainerState state;
    state.w = {0.4, -0.2};
    const ParamVector w0 = state.w;
    const ParamVector g = {0.0, 0.0};
    AdamConfig cfg;
    for (int t = 0; t < 50; ++t) adam_step(state, g, cfg);
    CHECK(state.w == w0);
}

TEST_CASE("adam with constant gradient steps by -lr*g/(|g|+eps)") {
    TrainerState state;
    state.w.assign(3, 0.0);
    const ParamVector g = {1.5, -0.5, 4.0};
    AdamConfig cfg;
    ParamVector want(3, 0.0);
    for (int t = 1; t <= 20; ++t) {
        adam_step(state, g, cfg);
        for (std::size_t i = 0; i < 3; ++i) {
            want[i] -= cfg.lr * g[i] / (std::abs(g[i]) + cfg.eps);
        }
    }
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(state.w[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
}

TEST_CASE("adam rejects non-finite gradients and bad lengths") {
    TrainerState state;
    state.w.assign(2, 0.0);
    AdamConfig cfg;
    CHECK_THROWS_AS(adam_step(state, {1.0}, cfg), ShapeError);
    CHECK_THROWS_AS(adam_step(state, {1.0, std::numeric_limits<double>::infinity()}, cfg),
                    NumericError);
}

TEST_CASE("polyak averaging closed form and edge cases") {
    ParamVector avg(3, 0.0);
    const ParamVector w(3, 1.0);
    polyak_update(avg, w, 0.99);
    for (double a : avg) CHECK(a == doctest::Approx(0.01).epsilon(1e-15));
    for (int t = 2; t <= 100; ++t) polyak_update(avg, w, 0.99);
    for (double a : avg) {
        CHECK(a == doctest::Approx(1.0 - std::pow(0.99, 100)).epsilon(1e-12));
    }

    ParamVector avg2 = {5.0, 5.0};
    const ParamVector w2 = {1.0, 2.0};
    polyak_update(avg2, w2, 0.0);  // decay 0: no averaging
    CHECK(avg2 == w2);

    ParamVector avg3 = w2;
    polyak_update(avg3, w2, 0.7);  // fixed point
    CHECK(avg3[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(avg3[1] == doctest::Approx(2.0).epsilon(1e-15));

    CHECK_THROWS_AS(polyak_update(avg2, ParamVector(3, 0.0), 0.5), ShapeError);
}

TEST_CASE("aggregated update reproduces each block solution bitwise") {
    Rng rng(41);
    SmallNet net = make_small_net(rng);
    Binding bind = net.binding();
    const BlockPartition part = make_partition(
        net.graph, {{"layer1", {"W1", "b1"}}, {"layer2", {"W2", "b2"}}});
    TrainerState state;
    state.w.assign(net.graph.param_count(), 0.0);
    for (double& v : state.w) v = rng.uniform(-0.5, 0.5);
    const ParamVector before = state.w;

    HFWorkspace ws(net.graph, 2);
    HFConfig cfg;
    cfg.alpha = 1.0;
    cfg.cg.max_iters = 8;
    cfg.cg.damping = 0.05;
    block_hf_step(state, net.graph, part, bind, 5, cfg, ws);

    // w_after - w_before re-read per block equals the stored CG solutions.
    ParamVector delta(state.w.size());
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = state.w[i] - before[i];
    for (std::size_t b = 0; b < part.count(); ++b) {
        std::vector<double> db(part.blocks[b].size, 0.0);
        part.gather(b, delta, db);
        // alpha = 1 and w started from `before`: the sum is exact per IEEE
        // only when reconstructed the same way, so compare against axpy.
        ParamVector rebuilt = before;
        ParamVector full(delta.size(), 0.0);
        for (std::size_t bb = 0; bb < part.count(); ++bb) {
            part.scatter(bb, state.prev_block_solutions[bb], full);
        }
        axpy_inplace(cfg.alpha, full, rebuilt);
        CHECK(rebuilt == state.w);
    }
}
