#pragma once

#include <functional>
#include <span>
#include <vector>

#include "blockhf/errors.hpp"

namespace blockhf {

// Matrix-free symmetric PSD map v -> A v. apply writes into out and must be
// deterministic for fixed underlying state.
struct LinearOperator {
    std::size_t dim = 0;
    std::function<void(std::span<const double>, std::span<double>)> apply;
};

// Tikhonov damping: apply'(v) = apply(v) + d * v.
LinearOperator damp(LinearOperator op, double d);

struct StopCriterion {
    enum class Kind {
        RelativeResidual,    // ||r_k|| / ||g|| <= tol
        QuadraticProgress,   // (q_k - q_{k-j}) / q_k < k * tol, j = max(10, 0.1 k)
    };
    Kind kind = Kind::RelativeResidual;
    double tol = 1e-4;
};

struct CGConfig {
    std::size_t max_iters = 30;
    StopCriterion stop;
    double damping = 0.0;  // applied by the caller via damp()
};

struct CGResult {
    std::vector<double> x;
    std::size_t iterations = 0;
    double residual_norm = 0.0;
    std::vector<double> q_history;  // q at x0, then after each iteration
};

// Linear conjugate gradient on A x = -g starting from x0, where A is the
// already-damped curvature operator. Terminates on max_iters, on the stop
// criterion, or returns the current iterate if p^T A p <= 0 shows up
// numerically (the operator is PSD by contract, so that is rounding).
CGResult cg_solve(const LinearOperator& op, std::span<const double> g,
                  std::span<const double> x0, const CGConfig& cfg);

// q(x) = x^T g + 0.5 * x^T A x, the quadratic model the solve minimizes.
double quadratic_value(const LinearOperator& op, std::span<const double> g,
                       std::span<const double> x);

}  // namespace blockhf
