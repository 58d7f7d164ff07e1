#include <doctest.h>

#include <cmath>

#include "blockhf/cg.hpp"
#include "blockhf/rng.hpp"
#include "blockhf/tensor.hpp"

using namespace blockhf;

namespace {

LinearOperator matrix_op(const std::vector<double>& a, std::size_t n) {
    LinearOperator op;
    op.dim = n;
    op.apply = [a, n](std::span<const double> v, std::span<double> out) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += a[i * n + j] * v[j];
            out[i] = s;
        }
    };
    return op;
}

LinearOperator identity_op(std::size_t n) {
    LinearOperator op;
    op.dim = n;
    op.apply = [](std::span<const double> v, std::span<double> out) {
        std::copy(v.begin(), v.end(), out.begin());
    };
    return op;
}

LinearOperator zero_op(std::size_t n) {
    LinearOperator op;
    op.dim = n;
    op.apply = [](std::span<const double>, std::span<double> out) {
        std::fill(out.begin(), out.end(), 0.0);
    };
    return op;
}

}  // namespace

TEST_CASE("damp adds d times the identity") {
    SUBCASE("d = 0 leaves the operator untouched") {
        const LinearOperator op = damp(identity_op(2), 0.0);
        std::vector<double> out(2, 0.0);
        const std::vector<double> v = {3.0, -1.0};
        op.apply(v, out);
        CHECK(out == v);
    }
    SUBCASE("zero map with d = 1 becomes the identity") {
        const LinearOperator op = damp(zero_op(3), 1.0);
        std::vector<double> out(3, 0.0);
        const std::vector<double> v = {1.0, 2.0, 3.0};
        op.apply(v, out);
        CHECK(out == v);
    }
    SUBCASE("identity with d = 1 doubles") {
        const LinearOperator op = damp(identity_op(1), 1.0);
        std::vector<double> out(1, 0.0);
        const std::vector<double> v = {2.0};
        op.apply(v, out);
        CHECK(out[0] == 4.0);
    }
    SUBCASE("negative damping is rejected") {
        CHECK_THROWS_AS(damp(identity_op(1), -0.5), ShapeError);
    }
}

TEST_CASE("cg solves the known 2x2 system in two iterations") {
    const LinearOperator op = matrix_op({4.0, 1.0, 1.0, 3.0}, 2);
    const std::vector<double> g = {-1.0, -2.0};
    const std::vector<double> x0 = {0.0, 0.0};
    CGConfig cfg;
    cfg.max_iters = 2;
    cfg.stop.tol = 1e-14;
    const CGResult res = cg_solve(op, g, x0, cfg);
    CHECK(res.iterations <= 2);
    CHECK(res.x[0] == doctest::Approx(1.0 / 11.0).epsilon(1e-12));
    CHECK(res.x[1] == doctest::Approx(7.0 / 11.0).epsilon(1e-12));
}

TEST_CASE("identity system converges in one iteration") {
    const std::size_t n = 7;
    Rng rng(5);
    std::vector<double> g(n);
    for (double& v : g) v = rng.uniform(-1.0, 1.0);
    CGConfig cfg;
    cfg.max_iters = 10;
    cfg.stop.tol = 1e-12;
    const CGResult res = cg_solve(identity_op(n), g, std::vector<double>(n, 0.0), cfg);
    CHECK(res.iterations == 1);
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(res.x[i] == doctest::Approx(-g[i]).epsilon(1e-14));
    }
}

TEST_CASE("exact warm start terminates with zero iterations") {
    const std::size_t n = 4;
    const LinearOperator op = identity_op(n);
    Rng rng(6);
    std::vector<double> b(n);
    for (double& v : b) v = rng.uniform(-2.0, 2.0);
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = -b[i];
    CGConfig cfg;
    cfg.max_iters = 10;
    cfg.stop.tol = 1e-10;
    const CGResult res = cg_solve(op, g, b, cfg);
    CHECK(res.iterations == 0);
    CHECK(res.residual_norm == 0.0);
    CHECK(res.x == b);
}

TEST_CASE("max_iters zero returns the start point unchanged") {
    Rng rng(7);
    std::vector<double> g(3), x0(3);
    for (double& v : g) v = rng.uniform(-1.0, 1.0);
    for (double& v : x0) v = rng.uniform(-1.0, 1.0);
    CGConfig cfg;
    cfg.max_iters = 0;
    const CGResult res = cg_solve(matrix_op({2, 0, 0, 0, 3, 0, 0, 0, 4}, 3), g, x0, cfg);
    CHECK(res.x == x0);
    CHECK(res.iterations == 0);
}

TEST_CASE("q history is recorded and non-increasing") {
    Rng rng(8);
    const std::size_t n = 12;
    // diagonal SPD system
    std::vector<double> a(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) a[i * n + i] = 1.0 + rng.uniform(0.0, 9.0);
    std::vector<double> g(n);
    for (double& v : g) v = rng.uniform(-1.0, 1.0);
    CGConfig cfg;
    cfg.max_iters = n;
    cfg.stop.tol = 1e-12;
    const CGResult res = cg_solve(matrix_op(a, n), g, std::vector<double>(n, 0.0), cfg);
    REQUIRE(res.q_history.size() == res.iterations + 1);
    CHECK(res.q_history.front() == 0.0);  // q(0) = 0
    for (std::size_t k = 1; k < res.q_history.size(); ++k) {
        CHECK(res.q_history[k] <= res.q_history[k - 1] + 1e-12);
    }
    // value at the output is no worse than at the start
    const LinearOperator op = matrix_op(a, n);
    CHECK(quadratic_value(op, g, res.x) <= quadratic_value(op, g, std::vector<double>(n, 0.0)));
}

TEST_CASE("quadratic_value identities") {
    const LinearOperator op = identity_op(3);
    const std::vector<double> b = {1.0, -2.0, 0.5};
    std::vector<double> g(3);
    for (std::size_t i = 0; i < 3; ++i) g[i] = -b[i];
    CHECK(quadratic_value(op, g, std::vector<double>(3, 0.0)) == 0.0);
    CHECK(quadratic_value(op, g, b) ==
          doctest::Approx(-0.5 * (1.0 + 4.0 + 0.25)).epsilon(1e-15));
    CHECK_THROWS_AS(quadratic_value(op, std::vector<double>(2, 0.0), b), ShapeError);
}

TEST_CASE("negative curvature returns the current iterate instead of stepping") {
    // -I is as hostile as it gets; p^T A p < 0 on the first iteration.
    std::vector<double> a = {-1.0, 0.0, 0.0, -1.0};
    std::vector<double> g = {1.0, 1.0};
    CGConfig cfg;
    cfg.max_iters = 5;
    const std::vector<double> x0 = {0.25, -0.75};
    const CGResult res = cg_solve(matrix_op(a, 2), g, x0, cfg);
    CHECK(res.iterations == 0);
    CHECK(res.x == x0);
}

TEST_CASE("dimension mismatches are rejected") {
    CGConfig cfg;
    CHECK_THROWS_AS(
        cg_solve(identity_op(3), std::vector<double>(2, 0.0), std::vector<double>(3, 0.0), cfg),
        ShapeError);
    CHECK_THROWS_AS(
        cg_solve(identity_op(3), std::vector<double>(3, 0.0), std::vector<double>(2, 0.0), cfg),
        ShapeError);
}

TEST_CASE("non-finite values abort with a diagnostic") {
    LinearOperator bad;
    bad.dim = 2;
    bad.apply = [](std::span<const double>, std::span<double> out) {
        out[0] = std::numeric_limits<double>::quiet_NaN();
        out[1] = 0.0;
    };
    CGConfig cfg;
    cfg.max_iters = 3;
    CHECK_THROWS_AS(
        cg_solve(bad, std::vector<double>{1.0, 1.0}, std::vector<double>{0.0, 0.0}, cfg),
        NumericError);
}

TEST_CASE("quadratic progress criterion stops early on stagnating solves") {
    // Nearly-singular direction: progress collapses after the dominant
    // eigendirections are resolved.
    const std::size_t n = 40;
    std::vector<double> a(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) a[i * n + i] = (i < 3) ? 100.0 : 1.0;
    Rng rng(10);
    std::vector<double> g(n);
    for (double& v : g) v = rng.uniform(-1.0, 1.0);

    CGConfig cfg;
    cfg.max_iters = n;
    cfg.stop.kind = StopCriterion::Kind::QuadraticProgress;
    cfg.stop.tol = 5e-4;
    const CGResult res = cg_solve(matrix_op(a, n), g, std::vector<double>(n, 0.0), cfg);
    CHECK(res.iterations < n);   // stopped before the budget
    CHECK(res.iterations >= 10); // but not before the window filled
}
