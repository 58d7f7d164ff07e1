#include "blockhf/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "blockhf/autodiff.hpp"
#include "blockhf/cg.hpp"
#include "blockhf/models.hpp"
#include "blockhf/optimizer.hpp"
#include "blockhf/rng.hpp"
#include "blockhf/tensor.hpp"

namespace blockhf {

namespace {

// ---------------------------------------------------------------- helpers

double rel_err(double a, double b, double floor_) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor_});
}

double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

// Max per-coordinate relative error, floored at a thousandth of the larger
// vector's own scale so near-zero coordinates are judged against the
// vector's magnitude rather than their own.
double vec_rel_err(std::span<const double> a, std::span<const double> b) {
    const double scale = std::max(max_abs(a), max_abs(b));
    const double floor_ = std::max(1e-3 * scale, 1e-12);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, rel_err(a[i], b[i], floor_));
    }
    return worst;
}

ParamVector random_vec(std::size_t n, Rng& rng, double scale) {
    ParamVector v(n);
    for (double& x : v) x = rng.uniform(-scale, scale);
    return v;
}

// Dense solve with partial pivoting; a is row-major n x n (consumed).
std::vector<double> solve_dense(std::vector<double> a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
        }
        if (piv != col) {
            for (std::size_t j = 0; j < n; ++j) std::swap(a[col * n + j], a[piv * n + j]);
            std::swap(b[col], b[piv]);
        }
        const double d = a[col * n + col];
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r * n + col] / d;
            if (f == 0.0) continue;
            for (std::size_t j = col; j < n; ++j) a[r * n + j] -= f * a[col * n + j];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n, 0.0);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t j = i + 1; j < n; ++j) s -= a[i * n + j] * x[j];
        x[i] = s / a[i * n + i];
    }
    return x;
}

// Orthonormal basis via modified Gram-Schmidt over a random matrix.
std::vector<double> random_orthonormal(std::size_t n, Rng& rng) {
    std::vector<double> q(n * n);
    for (double& v : q) v = rng.uniform(-1.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        double* qi = q.data() + i * n;
        for (std::size_t j = 0; j < i; ++j) {
            const double* qj = q.data() + j * n;
            double d = 0.0;
            for (std::size_t k = 0; k < n; ++k) d += qi[k] * qj[k];
            for (std::size_t k = 0; k < n; ++k) qi[k] -= d * qj[k];
        }
        double nn = 0.0;
        for (std::size_t k = 0; k < n; ++k) nn += qi[k] * qi[k];
        nn = std::sqrt(nn);
        for (std::size_t k = 0; k < n; ++k) qi[k] /= nn;
    }
    return q;  // rows are orthonormal
}

struct SpdSystem {
    std::vector<double> a;  // n x n SPD
    std::size_t n = 0;
};

SpdSystem spd_from_spectrum(std::size_t n, const std::vector<double>& lambda, Rng& rng) {
    const std::vector<double> q = random_orthonormal(n, rng);
    SpdSystem sys;
    sys.n = n;
    sys.a.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += q[k * n + i] * lambda[k] * q[k * n + j];
            sys.a[i * n + j] = s;
        }
    }
    return sys;
}

// A = Q^T diag(lambda) Q with log-spaced spectrum in [1, cond].
SpdSystem random_spd(std::size_t n, double cond, Rng& rng) {
    std::vector<double> lambda(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
        lambda[i] = std::pow(cond, t);
    }
    return spd_from_spectrum(n, lambda, rng);
}

// Spectrum with `distinct` log-spaced values repeated across n; exact CG
// termination then takes about `distinct` iterations even at high condition
// numbers, which keeps the n-step property observable in floating point.
SpdSystem random_spd_clustered(std::size_t n, double cond, std::size_t distinct, Rng& rng) {
    std::vector<double> lambda(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i % distinct) / static_cast<double>(distinct - 1);
        lambda[i] = std::pow(cond, t);
    }
    return spd_from_spectrum(n, lambda, rng);
}

LinearOperator dense_operator(const SpdSystem& sys) {
    LinearOperator op;
    op.dim = sys.n;
    op.apply = [&sys](std::span<const double> v, std::span<double> out) {
        for (std::size_t i = 0; i < sys.n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < sys.n; ++j) s += sys.a[i * sys.n + j] * v[j];
            out[i] = s;
        }
    };
    return op;
}

// Feedforward net: tanh hidden layers, linear output, fused loss. The loss
// node is also usable as the output for scalar-graph checks.
Graph make_mlp(const std::vector<int>& sizes, LossKind kind, bool loss_as_output = false) {
    GraphBuilder b;
    const int x = b.input("x", sizes.front());
    const int y = b.input("y", sizes.back());
    int h = x;
    for (std::size_t l = 1; l < sizes.size(); ++l) {
        const int w = b.param("W" + std::to_string(l), sizes[l - 1], sizes[l]);
        const int bias = b.param("b" + std::to_string(l), 1, sizes[l], InitKind::Zero);
        const int lin = b.add(b.matmul(h, w), bias);
        h = (l + 1 < sizes.size()) ? b.tanh(lin) : lin;
    }
    const int loss = kind == LossKind::Mse ? b.mse_loss(h, y) : b.softmax_ce_loss(h, y);
    b.set_output(loss_as_output ? loss : h);
    b.set_loss(loss);
    return b.finish();
}

struct MlpData {
    Tensor x, y;
    Binding binding(const Graph& g) const {
        Binding b;
        b.bind(g.find_input("x"), x);
        b.bind(g.find_input("y"), y);
        return b;
    }
};

MlpData random_mlp_data(const std::vector<int>& sizes, LossKind kind, int batch, Rng& rng) {
    MlpData d;
    d.x = seeded_uniform({static_cast<std::size_t>(batch),
                          static_cast<std::size_t>(sizes.front())},
                         -1.0, 1.0, rng);
    const std::size_t out = static_cast<std::size_t>(sizes.back());
    if (kind == LossKind::Mse) {
        d.y = seeded_uniform({static_cast<std::size_t>(batch), out}, 0.0, 1.0, rng);
    } else {
        d.y = Tensor::matrix(batch, out);
        for (int i = 0; i < batch; ++i) {
            d.y.data[static_cast<std::size_t>(i) * out + rng.uniform_index(out)] = 1.0;
        }
    }
    return d;
}

// Dense Gauss-Newton matrix assembled column by column from unit-vector
// products of a path that is cross-checked elsewhere against per-column
// Jacobian assembly.
std::vector<double> dense_ggn_by_columns(const Graph& g, const Binding& bind,
                                         const ParamVector& w, EvalContext& ctx) {
    const std::size_t p = g.param_count();
    std::vector<double> dense(p * p, 0.0);
    ParamVector e(p, 0.0);
    forward(g, bind, w, ctx);
    for (std::size_t j = 0; j < p; ++j) {
        e[j] = 1.0;
        const ParamVector col = ggn_vp_from_forward(g, e, ctx);
        for (std::size_t i = 0; i < p; ++i) dense[i * p + j] = col[i];
        e[j] = 0.0;
    }
    return dense;
}

// Dense GGN assembled from explicit per-sample Jacobians (forward-mode unit
// directions) and the analytic output Hessian. Independent of the fused
// reverse path inside ggn_vp.
std::vector<double> dense_ggn_from_jacobians(const Graph& g, const MlpData& data,
                                             const ParamVector& w, LossKind kind,
                                             EvalContext& ctx) {
    const std::size_t p = g.param_count();
    const std::size_t m = data.x.rows();
    const std::size_t d = static_cast<std::size_t>(g.node(g.output()).cols);

    // Batched Jacobian: tangents of the output for each unit direction give
    // J for every sample at once. jac[s] is d x p for sample s.
    std::vector<std::vector<double>> jac(m, std::vector<double>(d * p, 0.0));
    const Binding bind = data.binding(g);
    forward(g, bind, w, ctx);
    ParamVector e(p, 0.0);
    for (std::size_t col = 0; col < p; ++col) {
        e[col] = 1.0;
        run_tangent(g, e, ctx);
        const auto tz = ctx.tangent(g.output());
        for (std::size_t s = 0; s < m; ++s) {
            for (std::size_t j = 0; j < d; ++j) {
                jac[s][j * p + col] = tz[s * d + j];
            }
        }
        e[col] = 0.0;
    }

    // Per-sample output Hessian.
    const Tensor z = ctx.value_tensor(g.output());
    std::vector<double> dense(p * p, 0.0);
    for (std::size_t s = 0; s < m; ++s) {
        std::vector<double> h(d * d, 0.0);
        if (kind == LossKind::Mse) {
            for (std::size_t j = 0; j < d; ++j) h[j * d + j] = 1.0;
        } else {
            std::vector<double> zs(d), ps(d);
            for (std::size_t j = 0; j < d; ++j) zs[j] = z.data[s * d + j];
            double mmax = zs[0];
            for (std::size_t j = 1; j < d; ++j) mmax = std::max(mmax, zs[j]);
            double se = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                ps[j] = std::exp(zs[j] - mmax);
                se += ps[j];
            }
            for (std::size_t j = 0; j < d; ++j) ps[j] /= se;
            for (std::size_t i = 0; i < d; ++i) {
                for (std::size_t j = 0; j < d; ++j) {
                    h[i * d + j] = (i == j ? ps[i] : 0.0) - ps[i] * ps[j];
                }
            }
        }
        // dense += (1/m) J^T H J
        std::vector<double> hj(d * p, 0.0);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t k = 0; k < d; ++k) {
                const double hik = h[i * d + k];
                if (hik == 0.0) continue;
                for (std::size_t col = 0; col < p; ++col) {
                    hj[i * p + col] += hik * jac[s][k * p + col];
                }
            }
        }
        const double inv = 1.0 / static_cast<double>(m);
        for (std::size_t r = 0; r < p; ++r) {
            for (std::size_t i = 0; i < d; ++i) {
                const double jir = jac[s][i * p + r];
                if (jir == 0.0) continue;
                for (std::size_t col = 0; col < p; ++col) {
                    dense[r * p + col] += inv * jir * hj[i * p + col];
                }
            }
        }
    }
    return dense;
}

void matvec(const std::vector<double>& a, std::span<const double> v,
            std::span<double> out) {
    const std::size_t n = v.size();
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += a[i * n + j] * v[j];
        out[i] = s;
    }
}

// Quadratic objective 0.5 * ||M w - M w*||^2 through the graph machinery:
// one fused-MSE "sample" whose Jacobian is exactly M, so the Gauss-Newton
// matrix is M^T M.
struct QuadraticProblem {
    Graph graph;
    ParamVector wstar;
    std::vector<double> a;  // M^T M
};

QuadraticProblem make_quadratic(std::size_t n, double cond, Rng& rng) {
    const std::vector<double> q = random_orthonormal(n, rng);
    std::vector<double> m(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
        const double sqrt_lambda = std::pow(cond, 0.5 * t);
        for (std::size_t j = 0; j < n; ++j) m[i * n + j] = sqrt_lambda * q[i * n + j];
    }

    QuadraticProblem prob;
    prob.wstar = random_vec(n, rng, 1.0);

    // z = w * C with C = M^T, so z^T = M w.
    std::vector<double> c(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] = m[j * n + i];
    }
    std::vector<double> target(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) target[i] += m[i * n + j] * prob.wstar[j];
    }

    GraphBuilder b;
    const int w = b.param("w", 1, static_cast<int>(n));
    const int cc = b.constant(static_cast<int>(n), static_cast<int>(n), c);
    const int z = b.matmul(w, cc);
    const int y = b.constant(1, static_cast<int>(n), target);
    b.set_output(z);
    b.set_loss(b.mse_loss(z, y));
    prob.graph = b.finish();

    prob.a.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += m[k * n + i] * m[k * n + j];
            prob.a[i * n + j] = s;
        }
    }
    return prob;
}

CheckResult check(const std::string& name, double measured, double tol,
                  CheckResult::Sense sense = CheckResult::Sense::AtMost,
                  const std::string& note = "") {
    CheckResult r;
    r.name = name;
    r.measured = measured;
    r.tolerance = tol;
    r.sense = sense;
    r.passed = sense == CheckResult::Sense::AtMost ? measured <= tol : measured >= tol;
    r.note = note;
    return r;
}

}  // namespace

// ------------------------------------------------------------- autodiff

std::vector<CheckResult> verify_autodiff(const FaultInjection& fault) {
    std::vector<CheckResult> out;
    Rng rng(0xad1d1ff5eedULL);
    const double eps = 1e-5;

    // Central finite differences against grad and hvp: 20 random (w, v)
    // pairs on a tanh MLP (211 parameters).
    {
        const std::vector<int> sizes{9, 12, 7};
        Graph g = make_mlp(sizes, LossKind::Mse);
        EvalContext ctx(g);
        const std::size_t p = g.param_count();
        double worst_grad = 0.0, worst_hvp = 0.0;
        for (int trial = 0; trial < 20; ++trial) {
            MlpData data = random_mlp_data(sizes, LossKind::Mse, 4, rng);
            const Binding bind = data.binding(g);
            ParamVector w = random_vec(p, rng, 0.5);
            const ParamVector v = random_vec(p, rng, 1.0);

            const ParamVector an = grad(g, bind, w, ctx);
            ParamVector fd(p, 0.0);
            for (std::size_t i = 0; i < p; ++i) {
                const double keep = w[i];
                w[i] = keep + eps;
                const double up = loss_value(g, bind, w, ctx);
                w[i] = keep - eps;
                const double down = loss_value(g, bind, w, ctx);
                w[i] = keep;
                fd[i] = (up - down) / (2.0 * eps);
            }
            worst_grad = std::max(worst_grad, vec_rel_err(an, fd));

            const ParamVector hv = hvp(g, bind, w, v, ctx);
            ParamVector wp = w, wm = w;
            axpy_inplace(eps, v, wp);
            axpy_inplace(-eps, v, wm);
            const ParamVector gp = grad(g, bind, wp, ctx);
            const ParamVector gm = grad(g, bind, wm, ctx);
            ParamVector hfd(p);
            for (std::size_t i = 0; i < p; ++i) hfd[i] = (gp[i] - gm[i]) / (2.0 * eps);
            worst_hvp = std::max(worst_hvp, vec_rel_err(hv, hfd));
        }
        out.push_back(check("autodiff.grad_fd", worst_grad, 1e-6));
        out.push_back(check("autodiff.hvp_fd", worst_hvp, 1e-5));
    }

    // Hessian symmetry through hvp.
    {
        const std::vector<int> sizes{5, 6, 4};
        Graph g = make_mlp(sizes, LossKind::Mse);
        EvalContext ctx(g);
        const std::size_t p = g.param_count();
        double worst = 0.0;
        for (int trial = 0; trial < 10; ++trial) {
            MlpData data = random_mlp_data(sizes, LossKind::Mse, 3, rng);
            const Binding bind = data.binding(g);
            const ParamVector w = random_vec(p, rng, 0.5);
            const ParamVector u = random_vec(p, rng, 1.0);
            const ParamVector v = random_vec(p, rng, 1.0);
            const ParamVector hu = hvp(g, bind, w, u, ctx);
            const ParamVector hv = hvp(g, bind, w, v, ctx);
            const double uhv = dot(std::span<const double>(u), std::span<const double>(hv));
            const double vhu = dot(std::span<const double>(v), std::span<const double>(hu));
            worst = std::max(worst, rel_err(uhv, vhu, 1.0));
        }
        out.push_back(check("autodiff.hvp_symmetry", worst, 1e-10));
    }

    // Forward-mode linearity and the jvp/grad adjoint identity on a
    // scalar-output graph. The fault seam perturbs the tangent here.
    {
        const std::vector<int> sizes{6, 5, 3};
        Graph g = make_mlp(sizes, LossKind::Mse, /*loss_as_output=*/true);
        EvalContext ctx(g);
        const std::size_t p = g.param_count();
        double worst_lin = 0.0, worst_adj = 0.0;
        for (int trial = 0; trial < 10; ++trial) {
            MlpData data = random_mlp_data(sizes, LossKind::Mse, 3, rng);
            const Binding bind = data.binding(g);
            const ParamVector w = random_vec(p, rng, 0.5);
            const ParamVector v1 = random_vec(p, rng, 1.0);
            const ParamVector v2 = random_vec(p, rng, 1.0);
            const double a = rng.uniform(-2.0, 2.0), b = rng.uniform(-2.0, 2.0);

            ParamVector combo(p);
            for (std::size_t i = 0; i < p; ++i) combo[i] = a * v1[i] + b * v2[i];
            const double j1 = jvp(g, bind, w, v1, ctx).data[0];
            const double j2 = jvp(g, bind, w, v2, ctx).data[0];
            const double jc = jvp(g, bind, w, combo, ctx).data[0];
            worst_lin = std::max(worst_lin, rel_err(jc, a * j1 + b * j2, 1.0));

            const ParamVector gr = grad(g, bind, w, ctx);
            const double jv = jvp(g, bind, w, v1, ctx).data[0] + fault.tangent_fault;
            const double gv = dot(std::span<const double>(gr), std::span<const double>(v1));
            worst_adj = std::max(worst_adj, rel_err(jv, gv, 1.0));
        }
        out.push_back(check("autodiff.jvp_linearity", worst_lin, 1e-10));
        out.push_back(check("autodiff.jvp_grad_adjoint", worst_adj, 1e-10));
    }

    // Analytic output-Hessian action.
    {
        const Tensor z = Tensor::row({0.3, -1.2, 0.4});
        const Tensor y = Tensor::row({0.0, 1.0, 0.0});
        const Tensor u = Tensor::row({0.7, -0.1, 2.0});
        const Tensor mse = loss_output_hessian_apply(LossKind::Mse, z, y, u);
        double err = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) {
            err = std::max(err, std::abs(mse.data[i] - u.data[i]));
        }
        out.push_back(check("autodiff.loss_hessian_mse", err, 0.0));

        const Tensor z2 = Tensor::row({0.0, 0.0});
        const Tensor y2 = Tensor::row({1.0, 0.0});
        const Tensor u2 = Tensor::row({1.0, 0.0});
        const Tensor r2 = loss_output_hessian_apply(LossKind::SoftmaxCe, z2, y2, u2);
        double err2 = std::max(std::abs(r2.data[0] - 0.25), std::abs(r2.data[1] + 0.25));
        const Tensor ones = Tensor::row({1.0, 1.0});
        const Tensor r3 = loss_output_hessian_apply(LossKind::SoftmaxCe, z2, y2, ones);
        err2 = std::max({err2, std::abs(r3.data[0]), std::abs(r3.data[1])});
        out.push_back(check("autodiff.loss_hessian_softmax", err2, 1e-15));
    }

    // Gauss-Newton products against densely assembled J^T H J, both losses,
    // on a 2-layer net (<= 200 parameters), plus PSD and symmetry.
    for (const LossKind kind : {LossKind::Mse, LossKind::SoftmaxCe}) {
        const std::vector<int> sizes{7, 9, 5};
        Graph g = make_mlp(sizes, kind);
        EvalContext ctx(g);
        const std::size_t p = g.param_count();
        MlpData data = random_mlp_data(sizes, kind, 6, rng);
        const Binding bind = data.binding(g);
        const ParamVector w = random_vec(p, rng, 0.5);

        const std::vector<double> dense = dense_ggn_from_jacobians(g, data, w, kind, ctx);
        double worst = 0.0;
        std::vector<double> ref(p);
        for (int trial = 0; trial < 10; ++trial) {
            const ParamVector v = random_vec(p, rng, 1.0);
            const ParamVector gv = ggn_vp(g, bind, w, v, ctx);
            matvec(dense, v, ref);
            worst = std::max(worst, vec_rel_err(gv, ref));
        }
        out.push_back(check(kind == LossKind::Mse ? "autodiff.ggn_dense_mse"
                                                  : "autodiff.ggn_dense_softmax",
                            worst, 1e-8));

        if (kind == LossKind::Mse) {
            double min_quad = std::numeric_limits<double>::infinity();
            double worst_sym = 0.0;
            forward(g, bind, w, ctx);
            for (int trial = 0; trial < 100; ++trial) {
                const ParamVector v = random_vec(p, rng, 1.0);
                const ParamVector gv = ggn_vp_from_forward(g, v, ctx);
                min_quad = std::min(min_quad, dot(std::span<const double>(v),
                                                  std::span<const double>(gv)));
                if (trial < 10) {
                    const ParamVector u = random_vec(p, rng, 1.0);
                    const ParamVector gu = ggn_vp_from_forward(g, u, ctx);
                    const double ugv = dot(std::span<const double>(u),
                                           std::span<const double>(gv));
                    const double vgu = dot(std::span<const double>(v),
                                           std::span<const double>(gu));
                    worst_sym = std::max(worst_sym, rel_err(ugv, vgu, 1.0));
                }
            }
            out.push_back(check("autodiff.ggn_psd", min_quad, -1e-10,
                                CheckResult::Sense::AtLeast));
            out.push_back(check("autodiff.ggn_symmetry", worst_sym, 1e-10));
        }
    }

    // On a network linear in w with MSE, the dropped curvature terms vanish
    // and the Gauss-Newton product equals the Hessian product.
    {
        const std::vector<int> sizes{6, 4};
        Graph g = make_mlp(sizes, LossKind::Mse);
        EvalContext ctx(g);
        const std::size_t p = g.param_count();
        MlpData data = random_mlp_data(sizes, LossKind::Mse, 5, rng);
        const Binding bind = data.binding(g);
        const ParamVector w = random_vec(p, rng, 0.5);
        double worst = 0.0;
        for (int trial = 0; trial < 10; ++trial) {
            const ParamVector v = random_vec(p, rng, 1.0);
            const ParamVector gv = ggn_vp(g, bind, w, v, ctx);
            const ParamVector hv = hvp(g, bind, w, v, ctx);
            worst = std::max(worst, vec_rel_err(gv, hv));
        }
        out.push_back(check("autodiff.ggn_hvp_linear", worst, 1e-8));
    }

    return out;
}

// ------------------------------------------------------------------- cg

std::vector<CheckResult> verify_cg() {
    std::vector<CheckResult> out;
    Rng rng(0xc6c6c6ULL);

    // Known 2x2 system: A = [[4,1],[1,3]], solve A x = [1,2].
    {
        SpdSystem sys;
        sys.n = 2;
        sys.a = {4.0, 1.0, 1.0, 3.0};
        const LinearOperator op = dense_operator(sys);
        const std::vector<double> g = {-1.0, -2.0};  // so -g = [1, 2]
        const std::vector<double> x0 = {0.0, 0.0};
        CGConfig cfg;
        cfg.max_iters = 2;
        cfg.stop.tol = 1e-14;
        const CGResult res = cg_solve(op, g, x0, cfg);
        const double err = std::max(std::abs(res.x[0] - 1.0 / 11.0),
                                    std::abs(res.x[1] - 7.0 / 11.0));
        out.push_back(check("cg.known_2x2", err, 1e-10,
                            CheckResult::Sense::AtMost,
                            res.iterations <= 2 ? "" : "took too many iterations"));
    }

    // Random SPD systems (n <= 30, condition number <= 1e3). The n-step
    // Krylov termination is an exact-arithmetic property; it survives
    // rounding for modest condition numbers with full spectra and for
    // high-condition spectra with few distinct eigenvalues, so the ensemble
    // spans both regimes. Dense-solve agreement is checked on converged
    // solves of the same systems, and q must never increase.
    {
        std::vector<SpdSystem> systems;
        systems.push_back(random_spd(5, 100.0, rng));
        systems.push_back(random_spd(17, 10.0, rng));
        systems.push_back(random_spd(30, 10.0, rng));
        systems.push_back(random_spd_clustered(20, 1e3, 5, rng));
        systems.push_back(random_spd_clustered(30, 1e3, 5, rng));

        double worst_res = 0.0, worst_match = 0.0, worst_mono = 0.0;
        for (const SpdSystem& sys : systems) {
            const std::size_t n = sys.n;
            const LinearOperator op = dense_operator(sys);
            const std::vector<double> g = random_vec(n, rng, 1.0);
            const std::vector<double> x0(n, 0.0);

            CGConfig cfg;
            cfg.max_iters = n;
            cfg.stop.tol = 1e-12;
            const CGResult res = cg_solve(op, g, x0, cfg);

            std::vector<double> ax(n, 0.0);
            op.apply(res.x, ax);
            double rn = 0.0, gn = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                rn += (ax[i] + g[i]) * (ax[i] + g[i]);
                gn += g[i] * g[i];
            }
            worst_res = std::max(worst_res, std::sqrt(rn / gn));
            for (std::size_t k = 1; k < res.q_history.size(); ++k) {
                worst_mono = std::max(worst_mono, res.q_history[k] - res.q_history[k - 1]);
            }

            CGConfig full = cfg;
            full.max_iters = 4 * n;
            const CGResult conv = cg_solve(op, g, x0, full);
            std::vector<double> rhs(n);
            for (std::size_t i = 0; i < n; ++i) rhs[i] = -g[i];
            const std::vector<double> xd = solve_dense(sys.a, rhs);
            worst_match = std::max(worst_match, vec_rel_err(conv.x, xd));
            for (std::size_t k = 1; k < conv.q_history.size(); ++k) {
                worst_mono = std::max(worst_mono, conv.q_history[k] - conv.q_history[k - 1]);
            }
        }
        out.push_back(check("cg.spd_exact_termination", worst_res, 1e-8));
        out.push_back(check("cg.spd_dense_match", worst_match, 1e-8));
        out.push_back(check("cg.q_monotone", worst_mono, 1e-12));
    }

    // Heavy damping turns the solution into -g/d.
    {
        const std::size_t n = 12;
        const SpdSystem sys = random_spd(n, 100.0, rng);
        double scale = 0.0;
        for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, sys.a[i * n + i]);
        const double d = 1e6 * scale;
        const LinearOperator op = damp(dense_operator(sys), d);
        const std::vector<double> g = random_vec(n, rng, 1.0);
        const std::vector<double> x0(n, 0.0);
        CGConfig cfg;
        cfg.max_iters = n;
        cfg.stop.tol = 1e-12;
        const CGResult res = cg_solve(op, g, x0, cfg);
        double xg = 0.0, xx = 0.0, gg = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            xg += res.x[i] * -g[i];
            xx += res.x[i] * res.x[i];
            gg += g[i] * g[i];
        }
        const double cosine = xg / std::sqrt(xx * gg);
        out.push_back(check("cg.damping_limit", cosine, 1.0 - 1e-6,
                            CheckResult::Sense::AtLeast));
    }

    // Warm starts: zero iterations leave x0 untouched; an exact x0 stops
    // immediately under the relative-residual rule.
    {
        const std::size_t n = 8;
        const SpdSystem sys = random_spd(n, 50.0, rng);
        const LinearOperator op = dense_operator(sys);
        const std::vector<double> g = random_vec(n, rng, 1.0);
        const std::vector<double> x0 = random_vec(n, rng, 1.0);
        CGConfig cfg;
        cfg.max_iters = 0;
        const CGResult res = cg_solve(op, g, x0, cfg);
        double diff = 0.0;
        for (std::size_t i = 0; i < n; ++i) diff = std::max(diff, std::abs(res.x[i] - x0[i]));

        std::vector<double> rhs(n);
        for (std::size_t i = 0; i < n; ++i) rhs[i] = -g[i];
        const std::vector<double> exact = solve_dense(sys.a, rhs);
        CGConfig cfg2;
        cfg2.max_iters = n;
        cfg2.stop.tol = 1e-8;
        const CGResult res2 = cg_solve(op, g, exact, cfg2);
        const double iters = static_cast<double>(res2.iterations);
        out.push_back(check("cg.warm_start", std::max(diff, iters), 0.0));
    }

    // quadratic_value identities: q(0) = 0 and the identity-operator optimum.
    {
        LinearOperator eye;
        eye.dim = 3;
        eye.apply = [](std::span<const double> v, std::span<double> o) {
            std::copy(v.begin(), v.end(), o.begin());
        };
        const std::vector<double> bvec = {1.0, -2.0, 0.5};
        std::vector<double> gv(3);
        for (std::size_t i = 0; i < 3; ++i) gv[i] = -bvec[i];
        const std::vector<double> zero(3, 0.0);
        const double q0 = quadratic_value(eye, gv, zero);
        const double qb = quadratic_value(eye, gv, bvec);
        const double want = -0.5 * (1.0 + 4.0 + 0.25);
        const double err = std::max(std::abs(q0), std::abs(qb - want));
        out.push_back(check("cg.quadratic_value", err, 1e-15));
    }

    return out;
}

// ------------------------------------------------------------ optimizer

std::vector<CheckResult> verify_optimizer() {
    std::vector<CheckResult> out;
    Rng rng(0x0b70c5ULL);

    // Block operators equal the corresponding diagonal blocks of the dense
    // Gauss-Newton matrix.
    {
        const std::vector<int> sizes{6, 5, 4};
        Graph g = make_mlp(sizes, LossKind::Mse);
        EvalContext ctx(g);
        const std::size_t p = g.param_count();
        MlpData data = random_mlp_data(sizes, LossKind::Mse, 5, rng);
        const Binding bind = data.binding(g);
        const ParamVector w = random_vec(p, rng, 0.5);
        const std::vector<double> dense = dense_ggn_by_columns(g, bind, w, ctx);

        const BlockPartition part = make_partition(
            g, {{"layer1", {"W1", "b1"}}, {"layer2", {"W2", "b2"}}});

        double worst = 0.0;
        for (std::size_t b = 0; b < part.count(); ++b) {
            EvalContext opctx(g);
            const LinearOperator op = make_block_operator(g, part, b, bind, w, opctx);
            const std::size_t nb = part.blocks[b].size;
            for (int trial = 0; trial < 5; ++trial) {
                const std::vector<double> vb = random_vec(nb, rng, 1.0);
                std::vector<double> got(nb, 0.0);
                op.apply(vb, got);

                ParamVector vfull(p, 0.0), want_full(p, 0.0);
                part.scatter(b, vb, vfull);
                matvec(dense, vfull, want_full);
                std::vector<double> want(nb, 0.0);
                part.gather(b, want_full, want);
                worst = std::max(worst, vec_rel_err(got, want));
            }
        }
        out.push_back(check("optimizer.block_vs_dense", worst, 1e-12));
    }

    // Linear model f(w) = X w with one fused-MSE sample: the two 1x1 block
    // operators are the diagonal of X^T X.
    {
        GraphBuilder b;
        const int w1 = b.param("w1", 1, 1);
        const int w2 = b.param("w2", 1, 1);
        const int wfull = b.concat_cols(w1, w2);
        // z = w C with C = X^T for X = [[1,2],[3,4]] gives Jacobian X.
        const int c = b.constant(2, 2, {1.0, 3.0, 2.0, 4.0});
        const int z = b.matmul(wfull, c);
        const int y = b.constant(1, 2, {0.0, 0.0});
        b.set_output(z);
        b.set_loss(b.mse_loss(z, y));
        Graph g = b.finish();

        const BlockPartition part = make_partition(g, {{"w1", {"w1"}}, {"w2", {"w2"}}});
        const ParamVector w = {0.3, -0.7};
        const Binding empty;
        double err = 0.0;
        const double want[2] = {10.0, 20.0};
        for (std::size_t blk = 0; blk < 2; ++blk) {
            EvalContext ctx(g);
            const LinearOperator op = make_block_operator(g, part, blk, empty, w, ctx);
            const std::vector<double> one = {1.0};
            std::vector<double> got(1, 0.0);
            op.apply(one, got);
            err = std::max(err, std::abs(got[0] - want[blk]));
        }
        out.push_back(check("optimizer.linear_blocks", err, 1e-12));
    }

    // Warm-start bookkeeping: with zero CG iterations the stored solution is
    // exactly 0.95 times the previous one.
    {
        Rng qrng(7);
        QuadraticProblem prob = make_quadratic(6, 10.0, qrng);
        const BlockPartition part = partition_preset(prob.graph, "single");
        HFWorkspace ws(prob.graph, part.count());
        TrainerState state;
        state.w = random_vec(6, qrng, 1.0);
        HFConfig cfg;
        cfg.alpha = 1.0;
        cfg.cg.max_iters = 6;
        cfg.cg.stop.tol = 1e-12;
        const Binding empty;
        block_hf_step(state, prob.graph, part, empty, 1, cfg, ws);
        std::vector<double> prev = state.prev_block_solutions[0];

        cfg.cg.max_iters = 0;
        block_hf_step(state, prob.graph, part, empty, 1, cfg, ws);
        double err = 0.0;
        for (std::size_t i = 0; i < prev.size(); ++i) {
            err = std::max(err, std::abs(state.prev_block_solutions[0][i] - 0.95 * prev[i]));
        }
        out.push_back(check("optimizer.warm_start_scaling", err, 0.0));
    }

    // One Hessian-free step with full CG on an SPD quadratic is a Newton
    // step: it lands on the minimizer.
    {
        Rng qrng(11);
        QuadraticProblem prob = make_quadratic(50, 100.0, qrng);
        const BlockPartition part = partition_preset(prob.graph, "single");
        HFWorkspace ws(prob.graph, part.count());
        TrainerState state;
        state.w = random_vec(50, qrng, 1.0);
        HFConfig cfg;
        cfg.alpha = 1.0;
        cfg.cg.max_iters = 50;
        cfg.cg.stop.tol = 1e-12;
        cfg.cg.damping = 0.0;
        const Binding empty;
        block_hf_step(state, prob.graph, part, empty, 1, cfg, ws);
        double err = 0.0;
        for (std::size_t i = 0; i < 50; ++i) {
            err = std::max(err, std::abs(state.w[i] - prob.wstar[i]));
        }
        out.push_back(check("optimizer.newton_one_shot", err, 1e-6));
    }

    // Adam closed forms.
    {
        const std::size_t n = 6;
        AdamConfig cfg;
        TrainerState state;
        state.w.assign(n, 0.0);
        ParamVector g(n);
        Rng arng(3);
        for (double& v : g) {
            v = arng.uniform(1.0, 4.0) * (arng.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0);
        }
        adam_step(state, g, cfg);
        double err = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double want = -cfg.lr * (g[i] > 0 ? 1.0 : -1.0);
            err = std::max(err, std::abs(state.w[i] - want));
        }
        out.push_back(check("optimizer.adam_first_step", err, cfg.lr * 1e-6));

        // Constant gradient: after bias correction mhat = g and vhat = g^2
        // exactly, so every step is -lr * g / (|g| + eps).
        TrainerState s2;
        s2.w.assign(n, 0.0);
        double werr = 0.0;
        ParamVector expected(n, 0.0);
        for (int t = 1; t <= 25; ++t) {
            adam_step(s2, g, cfg);
            for (std::size_t i = 0; i < n; ++i) {
                expected[i] -= cfg.lr * g[i] / (std::abs(g[i]) + cfg.eps);
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            werr = std::max(werr, std::abs(s2.w[i] - expected[i]));
        }
        out.push_back(check("optimizer.adam_constant", werr, 1e-9));
    }

    // Polyak closed form: from zero against constant w = 1.
    {
        ParamVector avg(4, 0.0);
        const ParamVector w(4, 1.0);
        double err = 0.0;
        std::size_t t = 0;
        for (const std::size_t target : {1ul, 10ul, 100ul}) {
            while (t < target) {
                polyak_update(avg, w, 0.99);
                ++t;
            }
            const double want = 1.0 - std::pow(0.99, static_cast<double>(t));
            for (double a : avg) err = std::max(err, std::abs(a - want));
        }
        out.push_back(check("optimizer.polyak_closed_form", err, 1e-12));
    }

    // Block equivalence: a full block-HF step equals the update from the
    // dense curvature matrix with off-diagonal blocks zeroed (solved
    // directly, block by block).
    {
        const std::vector<int> sizes{5, 4, 3};
        Graph g = make_mlp(sizes, LossKind::Mse);
        EvalContext ctx(g);
        const std::size_t p = g.param_count();
        MlpData data = random_mlp_data(sizes, LossKind::Mse, 6, rng);
        const Binding bind = data.binding(g);
        const ParamVector w0 = random_vec(p, rng, 0.5);

        const std::vector<double> dense = dense_ggn_by_columns(g, bind, w0, ctx);
        const ParamVector gradient = grad(g, bind, w0, ctx);

        const BlockPartition part = make_partition(
            g, {{"layer1", {"W1", "b1"}}, {"layer2", {"W2", "b2"}}});
        const double d = 0.1;

        ParamVector want(p, 0.0);
        for (std::size_t b = 0; b < part.count(); ++b) {
            const std::size_t nb = part.blocks[b].size;
            ParamVector probe(p, 0.0);
            std::vector<double> gb(nb, 0.0);
            part.gather(b, gradient, gb);
            // Dense diagonal block + damping.
            std::vector<double> ab(nb * nb, 0.0);
            std::vector<double> unit(nb, 0.0);
            for (std::size_t j = 0; j < nb; ++j) {
                unit[j] = 1.0;
                ParamVector full(p, 0.0), col(p, 0.0);
                part.scatter(b, unit, full);
                matvec(dense, full, col);
                std::vector<double> colb(nb, 0.0);
                part.gather(b, col, colb);
                for (std::size_t i = 0; i < nb; ++i) ab[i * nb + j] = colb[i];
                ab[j * nb + j] += d;
                unit[j] = 0.0;
            }
            std::vector<double> rhs(nb);
            for (std::size_t i = 0; i < nb; ++i) rhs[i] = -gb[i];
            const std::vector<double> xb = solve_dense(ab, rhs);
            part.scatter(b, xb, want);
        }

        TrainerState state;
        state.w = w0;
        HFWorkspace ws(g, part.count());
        HFConfig cfg;
        cfg.alpha = 1.0;
        cfg.cg.max_iters = p;
        cfg.cg.stop.tol = 1e-13;
        cfg.cg.damping = d;
        Binding batch = bind;
        block_hf_step(state, g, part, batch, data.x.rows(), cfg, ws);

        ParamVector got(p);
        for (std::size_t i = 0; i < p; ++i) got[i] = state.w[i] - w0[i];
        out.push_back(check("optimizer.block_equivalence", vec_rel_err(got, want), 1e-8));
    }

    return out;
}

std::vector<CheckResult> verify_suite(const std::string& suite, const FaultInjection& fault) {
    if (suite == "autodiff") return verify_autodiff(fault);
    if (suite == "cg") return verify_cg();
    if (suite == "optimizer") return verify_optimizer();
    if (suite == "all") {
        std::vector<CheckResult> out = verify_autodiff(fault);
        std::vector<CheckResult> cg = verify_cg();
        std::vector<CheckResult> opt = verify_optimizer();
        out.insert(out.end(), cg.begin(), cg.end());
        out.insert(out.end(), opt.begin(), opt.end());
        return out;
    }
    throw ConfigError("unknown verify suite '" + suite +
                      "' (expected autodiff, cg, optimizer, all)");
}

bool all_passed(const std::vector<CheckResult>& results) {
    return std::all_of(results.begin(), results.end(),
                       [](const CheckResult& r) { return r.passed; });
}

void print_report(const std::vector<CheckResult>& results, std::ostream& os) {
    for (const CheckResult& r : results) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%-36s %s  measured %.3e (%s %.3e)%s%s",
                      r.name.c_str(), r.passed ? "PASS" : "FAIL", r.measured,
                      r.sense == CheckResult::Sense::AtMost ? "tol" : "floor",
                      r.tolerance, r.note.empty() ? "" : "  ", r.note.c_str());
        os << buf << "\n";
    }
}

const CheckResult& find_check(const std::vector<CheckResult>& results,
                              const std::string& name) {
    for (const CheckResult& r : results) {
        if (r.name == name) return r;
    }
    throw ConfigError("no verification check named '" + name + "'");
}

}  // namespace blockhf
