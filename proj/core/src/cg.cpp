#include "blockhf/cg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "blockhf/tensor.hpp"

namespace blockhf {

LinearOperator damp(LinearOperator op, double d) {
    if (d < 0.0) throw ShapeError("damp: damping must be nonnegative, got " + std::to_string(d));
    if (d == 0.0) return op;
    LinearOperator out;
    out.dim = op.dim;
    out.apply = [inner = std::move(op), d](std::span<const double> v, std::span<double> r) {
        inner.apply(v, r);
        for (std::size_t i = 0; i < v.size(); ++i) r[i] += d * v[i];
    };
    return out;
}

double quadratic_value(const LinearOperator& op, std::span<const double> g,
                       std::span<const double> x) {
    if (g.size() != op.dim || x.size() != op.dim) {
        throw ShapeError("quadratic_value: dimension mismatch (op dim " +
                         std::to_string(op.dim) + ", g " + std::to_string(g.size()) +
                         ", x " + std::to_string(x.size()) + ")");
    }
    std::vector<double> ax(op.dim, 0.0);
    op.apply(x, ax);
    return dot(x, g) + 0.5 * dot(x, std::span<const double>(ax));
}

CGResult cg_solve(const LinearOperator& op, std::span<const double> g,
                  std::span<const double> x0, const CGConfig& cfg) {
    const std::size_t n = op.dim;
    if (g.size() != n || x0.size() != n) {
        throw ShapeError("cg_solve: dimension mismatch (op dim " + std::to_string(n) +
                         ", g " + std::to_string(g.size()) + ", x0 " +
                         std::to_string(x0.size()) + ")");
    }

    CGResult res;
    res.x.assign(x0.begin(), x0.end());

    std::vector<double> ax(n, 0.0);  // running A x
    op.apply(res.x, ax);

    // r = -g - A x
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = -g[i] - ax[i];
    std::vector<double> p = r;
    std::vector<double> ap(n, 0.0);

    const double gnorm = norm2(g);
    double rr = dot(std::span<const double>(r), std::span<const double>(r));
    double q = dot(res.x, g) + 0.5 * dot(res.x, std::span<const double>(ax));
    res.q_history.push_back(q);

    auto check_finite = [&](double v, const char* what) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("cg_solve: non-finite ") + what +
                               " at iteration " + std::to_string(res.iterations));
        }
    };
    check_finite(q, "quadratic value");
    check_finite(rr, "residual");

    auto stop_now = [&](std::size_t k) {
        switch (cfg.stop.kind) {
            case StopCriterion::Kind::RelativeResidual: {
                const double rn = std::sqrt(rr);
                if (gnorm == 0.0) return rn == 0.0;
                return rn / gnorm <= cfg.stop.tol;
            }
            case StopCriterion::Kind::QuadraticProgress: {
                // Martens-style: with window j = max(10, 0.1 k), stop once
                // q is negative and the last j iterations improved q by less
                // than a k*tol fraction.
                const std::size_t j = std::max<std::size_t>(10, k / 10);
                if (k < j || q >= 0.0) return false;
                const double qprev = res.q_history[res.q_history.size() - 1 - j];
                return (q - qprev) / q < static_cast<double>(k) * cfg.stop.tol;
            }
        }
        return false;
    };

    res.residual_norm = std::sqrt(rr);
    if (stop_now(0)) return res;

    for (std::size_t k = 0; k < cfg.max_iters; ++k) {
        std::fill(ap.begin(), ap.end(), 0.0);
        op.apply(p, ap);
        const double pap = dot(std::span<const double>(p), std::span<const double>(ap));
        check_finite(pap, "curvature product");
        if (pap <= 0.0) break;  // PSD in exact arithmetic; stop on rounding artifacts

        const double alpha = rr / pap;
        axpy_inplace(alpha, p, res.x);
        axpy_inplace(alpha, ap, ax);
        axpy_inplace(-alpha, ap, r);

        const double rr_next = dot(std::span<const double>(r), std::span<const double>(r));
        check_finite(rr_next, "residual");

        q = dot(res.x, g) + 0.5 * dot(res.x, std::span<const double>(ax));
        check_finite(q, "quadratic value");
        res.q_history.push_back(q);
        res.iterations = k + 1;

        const double beta = rr_next / rr;
        rr = rr_next;
        res.residual_norm = std::sqrt(rr);
        if (stop_now(k + 1)) break;

        for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
    }
    return res;
}

}  // namespace blockhf
