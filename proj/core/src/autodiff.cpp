#include "blockhf/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace blockhf {

namespace {

int realized(const Node& n, int batch) {
    return n.rows == kBatchRows ? batch : n.rows;
}

std::size_t buf_len(const Node& n, int batch) {
    return static_cast<std::size_t>(realized(n, batch)) * static_cast<std::size_t>(n.cols);
}

// dst += u .* v elementwise over an (R x C) grid. Any of the three may be a
// single-row tensor: sources broadcast, a single-row destination gathers a
// column sum. Row order is ascending, so accumulation order is fixed.
void acc_prod(double* dst, int dst_rows, const double* u, int u_rows,
              const double* v, int v_rows, int R, int C) {
    for (int i = 0; i < R; ++i) {
        double* dp = dst + (dst_rows == 1 ? 0 : static_cast<std::size_t>(i) * C);
        const double* up = u + (u_rows == 1 ? 0 : static_cast<std::size_t>(i) * C);
        const double* vp = v + (v_rows == 1 ? 0 : static_cast<std::size_t>(i) * C);
        for (int j = 0; j < C; ++j) dp[j] += up[j] * vp[j];
    }
}

// dst += u over an (R x C) grid; single-row destination gathers a column sum.
void acc_sum(double* dst, int dst_rows, const double* u, int R, int C) {
    for (int i = 0; i < R; ++i) {
        double* dp = dst + (dst_rows == 1 ? 0 : static_cast<std::size_t>(i) * C);
        const double* up = u + static_cast<std::size_t>(i) * C;
        for (int j = 0; j < C; ++j) dp[j] += up[j];
    }
}

void softmax_rows(const double* z, double* p, int R, int C) {
    for (int i = 0; i < R; ++i) {
        const double* zi = z + static_cast<std::size_t>(i) * C;
        double* pi = p + static_cast<std::size_t>(i) * C;
        double m = zi[0];
        for (int j = 1; j < C; ++j) m = std::max(m, zi[j]);
        double se = 0.0;
        for (int j = 0; j < C; ++j) {
            pi[j] = std::exp(zi[j] - m);
            se += pi[j];
        }
        for (int j = 0; j < C; ++j) pi[j] /= se;
    }
}

}  // namespace

const Tensor* Binding::find(int node) const {
    for (const auto& [id, t] : entries) {
        if (id == node) return t;
    }
    return nullptr;
}

EvalContext::EvalContext(const Graph& g) : graph_(&g) {
    const std::size_t n = g.nodes().size();
    val_.resize(n);
    tan_.resize(n);
    adj_.resize(n);
    tadj_.resize(n);
    aux_.resize(n);
    rrows_.resize(n, 0);
}

void EvalContext::prepare(int batch) {
    const auto& nodes = graph_->nodes();
    if (batch != batch_) {
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            rrows_[i] = realized(nodes[i], batch);
            val_[i].resize(buf_len(nodes[i], batch));
        }
        batch_ = batch;
    }
    has_values_ = false;
}

Tensor EvalContext::value_tensor(int id) const {
    const Node& n = graph_->node(id);
    return Tensor({static_cast<std::size_t>(rrows_[idx(id)]),
                   static_cast<std::size_t>(n.cols)},
                  std::vector<double>(val_[idx(id)].begin(), val_[idx(id)].end()));
}

Tensor EvalContext::tangent_tensor(int id) const {
    const Node& n = graph_->node(id);
    return Tensor({static_cast<std::size_t>(rrows_[idx(id)]),
                   static_cast<std::size_t>(n.cols)},
                  std::vector<double>(tan_[idx(id)].begin(), tan_[idx(id)].end()));
}

namespace {

void require_same_graph(const Graph& g, const EvalContext& ctx, const char* what) {
    if (&g != &ctx.graph()) {
        throw ShapeError(std::string(what) + ": context belongs to a different graph");
    }
}

}  // namespace

void forward(const Graph& g, const Binding& binding, const ParamVector& w,
             EvalContext& ctx) {
    require_same_graph(g, ctx, "forward");
    if (w.size() != g.param_count()) {
        throw ShapeError("forward: parameter vector length " + std::to_string(w.size()) +
                         " does not match graph parameter count " +
                         std::to_string(g.param_count()));
    }

    // The batch size is whatever the bound inputs agree on.
    int batch = 1;
    bool saw_input = false;
    for (int id : g.input_nodes()) {
        const Tensor* t = binding.find(id);
        if (t == nullptr) {
            throw ShapeError("forward: input '" + g.node(id).name + "' not bound");
        }
        if (t->cols() != static_cast<std::size_t>(g.node(id).cols)) {
            throw ShapeError("forward: input '" + g.node(id).name + "' expects " +
                             std::to_string(g.node(id).cols) + " columns, got " +
                             shape_str(t->shape));
        }
        const int r = static_cast<int>(t->rows());
        if (r == 0) throw ShapeError("forward: empty batch bound to '" + g.node(id).name + "'");
        if (!saw_input) {
            batch = r;
            saw_input = true;
        } else if (r != batch) {
            throw ShapeError("forward: bound inputs disagree on batch size (" +
                             std::to_string(batch) + " vs " + std::to_string(r) + ")");
        }
    }

    ctx.prepare(batch);
    const auto& nodes = g.nodes();
    for (std::size_t id = 0; id < nodes.size(); ++id) {
        const Node& n = nodes[id];
        const int R = ctx.rrows_[id];
        const int C = n.cols;
        std::vector<double>& out = ctx.val_[id];
        switch (n.kind) {
            case OpKind::Input: {
                const Tensor* t = binding.find(static_cast<int>(id));
                std::copy(t->data.begin(), t->data.end(), out.begin());
                break;
            }
            case OpKind::Param:
                std::copy(w.begin() + static_cast<std::ptrdiff_t>(n.param_offset),
                          w.begin() + static_cast<std::ptrdiff_t>(n.param_offset + out.size()),
                          out.begin());
                break;
            case OpKind::Const:
                std::copy(n.payload.begin(), n.payload.end(), out.begin());
                break;
            case OpKind::Zeros:
                std::fill(out.begin(), out.end(), 0.0);
                break;
            case OpKind::MatMul: {
                const Node& na = g.node(n.a);
                std::fill(out.begin(), out.end(), 0.0);
                kern::gemm_nn_acc(ctx.val_[static_cast<std::size_t>(n.a)].data(),
                                  ctx.val_[static_cast<std::size_t>(n.b)].data(), out.data(),
                                  static_cast<std::size_t>(ctx.rrows_[static_cast<std::size_t>(n.a)]),
                                  static_cast<std::size_t>(na.cols),
                                  static_cast<std::size_t>(C));
                break;
            }
            case OpKind::Add:
            case OpKind::Mul: {
                const double* a = ctx.val_[static_cast<std::size_t>(n.a)].data();
                const double* b = ctx.val_[static_cast<std::size_t>(n.b)].data();
                const int ra = ctx.rrows_[static_cast<std::size_t>(n.a)];
                const int rb = ctx.rrows_[static_cast<std::size_t>(n.b)];
                const bool is_add = n.kind == OpKind::Add;
                for (int i = 0; i < R; ++i) {
                    const double* ap = a + (ra == 1 ? 0 : static_cast<std::size_t>(i) * C);
                    const double* bp = b + (rb == 1 ? 0 : static_cast<std::size_t>(i) * C);
                    double* op = out.data() + static_cast<std::size_t>(i) * C;
                    if (is_add) {
                        for (int j = 0; j < C; ++j) op[j] = ap[j] + bp[j];
                    } else {
                        for (int j = 0; j < C; ++j) op[j] = ap[j] * bp[j];
                    }
                }
                break;
            }
            case OpKind::Tanh: {
                const auto& a = ctx.val_[static_cast<std::size_t>(n.a)];
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
                break;
            }
            case OpKind::Sigmoid: {
                const auto& a = ctx.val_[static_cast<std::size_t>(n.a)];
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a[i]));
                break;
            }
            case OpKind::SliceCols: {
                const double* a = ctx.val_[static_cast<std::size_t>(n.a)].data();
                const int ca = g.node(n.a).cols;
                for (int i = 0; i < R; ++i) {
                    const double* ap = a + static_cast<std::size_t>(i) * ca + n.lo;
                    double* op = out.data() + static_cast<std::size_t>(i) * C;
                    std::copy(ap, ap + C, op);
                }
                break;
            }
            case OpKind::ConcatCols: {
                const double* a = ctx.val_[static_cast<std::size_t>(n.a)].data();
                const double* b = ctx.val_[static_cast<std::size_t>(n.b)].data();
                const int ca = g.node(n.a).cols;
                const int cb = g.node(n.b).cols;
                for (int i = 0; i < R; ++i) {
                    double* op = out.data() + static_cast<std::size_t>(i) * C;
                    std::copy(a + static_cast<std::size_t>(i) * ca,
                              a + static_cast<std::size_t>(i + 1) * ca, op);
                    std::copy(b + static_cast<std::size_t>(i) * cb,
                              b + static_cast<std::size_t>(i + 1) * cb, op + ca);
                }
                break;
            }
            case OpKind::MeanRows: {
                const double* a = ctx.val_[static_cast<std::size_t>(n.a)].data();
                const int ra = ctx.rrows_[static_cast<std::size_t>(n.a)];
                std::fill(out.begin(), out.end(), 0.0);
                for (int i = 0; i < ra; ++i) {
                    const double* ap = a + static_cast<std::size_t>(i) * C;
                    for (int j = 0; j < C; ++j) out[static_cast<std::size_t>(j)] += ap[j];
                }
                for (int j = 0; j < C; ++j) out[static_cast<std::size_t>(j)] /= ra;
                break;
            }
            case OpKind::MseLoss: {
                const double* z = ctx.val_[static_cast<std::size_t>(n.a)].data();
                const double* y = ctx.val_[static_cast<std::size_t>(n.b)].data();
                const int rz = ctx.rrows_[static_cast<std::size_t>(n.a)];
                const int cz = g.node(n.a).cols;
                double s = 0.0;
                for (std::size_t i = 0; i < static_cast<std::size_t>(rz) * cz; ++i) {
                    const double d = z[i] - y[i];
                    s += 0.5 * d * d;
                }
                out[0] = s / rz;
                break;
            }
            case OpKind::SoftmaxCeLoss: {
                const double* z = ctx.val_[static_cast<std::size_t>(n.a)].data();
                const double* y = ctx.val_[static_cast<std::size_t>(n.b)].data();
                const int rz = ctx.rrows_[static_cast<std::size_t>(n.a)];
                const int cz = g.node(n.a).cols;
                auto& p = ctx.aux_[id];
                p.resize(static_cast<std::size_t>(rz) * cz);
                double s = 0.0;
                for (int i = 0; i < rz; ++i) {
                    const double* zi = z + static_cast<std::size_t>(i) * cz;
                    const double* yi = y + static_cast<std::size_t>(i) * cz;
                    double m = zi[0];
                    for (int j = 1; j < cz; ++j) m = std::max(m, zi[j]);
                    double se = 0.0;
                    double* pi = p.data() + static_cast<std::size_t>(i) * cz;
                    for (int j = 0; j < cz; ++j) {
                        pi[j] = std::exp(zi[j] - m);
                        se += pi[j];
                    }
                    double dotzy = 0.0;
                    for (int j = 0; j < cz; ++j) {
                        pi[j] /= se;
                        dotzy += yi[j] * zi[j];
                    }
                    s += m + std::log(se) - dotzy;
                }
                out[0] = s / rz;
                break;
            }
        }
    }
    ctx.has_values_ = true;
}

double loss_value(const Graph& g, const Binding& binding, const ParamVector& w,
                  EvalContext& ctx) {
    if (g.loss() < 0) throw ShapeError("graph has no loss node");
    forward(g, binding, w, ctx);
    return ctx.value(g.loss())[0];
}

void run_tangent(const Graph& g, const ParamVector& v, EvalContext& ctx) {
    require_same_graph(g, ctx, "run_tangent");
    if (!ctx.has_values_) throw ShapeError("run_tangent: forward pass required first");
    if (v.size() != g.param_count()) {
        throw ShapeError("tangent direction length " + std::to_string(v.size()) +
                         " does not match parameter count " + std::to_string(g.param_count()));
    }
    const auto& nodes = g.nodes();
    for (std::size_t id = 0; id < nodes.size(); ++id) {
        const Node& n = nodes[id];
        const int R = ctx.rrows_[id];
        const int C = n.cols;
        std::vector<double>& out = ctx.tan_[id];
        out.resize(ctx.val_[id].size());
        switch (n.kind) {
            case OpKind::Input:
            case OpKind::Const:
            case OpKind::Zeros:
                std::fill(out.begin(), out.end(), 0.0);
                break;
            case OpKind::Param:
                std::copy(v.begin() + static_cast<std::ptrdiff_t>(n.param_offset),
                          v.begin() + static_cast<std::ptrdiff_t>(n.param_offset + out.size()),
                          out.begin());
                break;
            case OpKind::MatMul: {
                const Node& na = g.node(n.a);
                const auto ra = static_cast<std::size_t>(ctx.rrows_[static_cast<std::size_t>(n.a)]);
                const auto ka = static_cast<std::size_t>(na.cols);
                std::fill(out.begin(), out.end(), 0.0);
                kern::gemm_nn_acc(ctx.tan_[static_cast<std::size_t>(n.a)].data(),
                                  ctx.val_[static_cast<std::size_t>(n.b)].data(), out.data(),
                                  ra, ka, static_cast<std::size_t>(C));
                kern::gemm_nn_acc(ctx.val_[static_cast<std::size_t>(n.a)].data(),
                                  ctx.tan_[static_cast<std::size_t>(n.b)].data(), out.data(),
                                  ra, ka, static_cast<std::size_t>(C));
                break;
            }
            case OpKind::Add: {
                const double* ta = ctx.tan_[static_cast<std::size_t>(n.a)].data();
                const double* tb = ctx.tan_[static_cast<std::size_t>(n.b)].data();
                const int ra = ctx.rrows_[static_cast<std::size_t>(n.a)];
                const int rb = ctx.rrows_[static_cast<std::size_t>(n.b)];
                for (int i = 0; i < R; ++i) {
                    const double* ap = ta + (ra == 1 ? 0 : static_cast<std::size_t>(i) * C);
                    const double* bp = tb + (rb == 1 ? 0 : static_cast<std::size_t>(i) * C);
                    double* op = out.data() + static_cast<std::size_t>(i) * C;
                    for (int j = 0; j < C; ++j) op[j] = ap[j] + bp[j];
                }
                break;
            }
            case OpKind::Mul: {
                // d(a.*b) = da.*b + a.*db
                const std::size_t ia = static_cast<std::size_t>(n.a);
                const std::size_t ib = static_cast<std::size_t>(n.b);
                const int ra = ctx.rrows_[ia];
                const int rb = ctx.rrows_[ib];
                std::fill(out.begin(), out.end(), 0.0);
                acc_prod(out.data(), R, ctx.tan_[ia].data(), ra, ctx.val_[ib].data(), rb, R, C);
                acc_prod(out.data(), R, ctx.val_[ia].data(), ra, ctx.tan_[ib].data(), rb, R, C);
                break;
            }
            case OpKind::Tanh: {
                const auto& z = ctx.val_[id];
                const auto& ta = ctx.tan_[static_cast<std::size_t>(n.a)];
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - z[i] * z[i]) * ta[i];
                break;
            }
            case OpKind::Sigmoid: {
                const auto& z = ctx.val_[id];
                const auto& ta = ctx.tan_[static_cast<std::size_t>(n.a)];
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = z[i] * (1.0 - z[i]) * ta[i];
                break;
            }
            case OpKind::SliceCols: {
                const double* ta = ctx.tan_[static_cast<std::size_t>(n.a)].data();
                const int ca = g.node(n.a).cols;
                for (int i = 0; i < R; ++i) {
                    const double* ap = ta + static_cast<std::size_t>(i) * ca + n.lo;
                    std::copy(ap, ap + C, out.data() + static_cast<std::size_t>(i) * C);
                }
                break;
            }
            case OpKind::ConcatCols: {
                const double* ta = ctx.tan_[static_cast<std::size_t>(n.a)].data();
                const double* tb = ctx.tan_[static_cast<std::size_t>(n.b)].data();
                const int ca = g.node(n.a).cols;
                const int cb = g.node(n.b).cols;
                for (int i = 0; i < R; ++i) {
                    double* op = out.data() + static_cast<std::size_t>(i) * C;
                    std::copy(ta + static_cast<std::size_t>(i) * ca,
                              ta + static_cast<std::size_t>(i + 1) * ca, op);
                    std::copy(tb + static_cast<std::size_t>(i) * cb,
                              tb + static_cast<std::size_t>(i + 1) * cb, op + ca);
                }
                break;
            }
            case OpKind::MeanRows: {
                const double* ta = ctx.tan_[static_cast<std::size_t>(n.a)].data();
                const int ra = ctx.rrows_[static_cast<std::size_t>(n.a)];
                std::fill(out.begin(), out.end(), 0.0);
                for (int i = 0; i < ra; ++i) {
                    const double* ap = ta + static_cast<std::size_t>(i) * C;
                    for (int j = 0; j < C; ++j) out[static_cast<std::size_t>(j)] += ap[j];
                }
                for (int j = 0; j < C; ++j) out[static_cast<std::size_t>(j)] /= ra;
                break;
            }
            case OpKind::MseLoss: {
                const std::size_t ia = static_cast<std::size_t>(n.a);
                const std::size_t ib = static_cast<std::size_t>(n.b);
                const double* z = ctx.val_[ia].data();
                const double* y = ctx.val_[ib].data();
                const double* tz = ctx.tan_[ia].data();
                const double* ty = ctx.tan_[ib].data();
                const int rz = ctx.rrows_[ia];
                const int cz = g.node(n.a).cols;
                double s = 0.0;
                for (std::size_t i = 0; i < static_cast<std::size_t>(rz) * cz; ++i) {
                    s += (z[i] - y[i]) * (tz[i] - ty[i]);
                }
                out[0] = s / rz;
                break;
            }
            case OpKind::SoftmaxCeLoss: {
                const std::size_t ia = static_cast<std::size_t>(n.a);
                const std::size_t ib = static_cast<std::size_t>(n.b);
                const double* z = ctx.val_[ia].data();
                const double* y = ctx.val_[ib].data();
                const double* tz = ctx.tan_[ia].data();
                const double* ty = ctx.tan_[ib].data();
                const double* p = ctx.aux_[id].data();
                const int rz = ctx.rrows_[ia];
                const int cz = g.node(n.a).cols;
                double s = 0.0;
                for (int i = 0; i < rz; ++i) {
                    const std::size_t off = static_cast<std::size_t>(i) * cz;
                    for (int j = 0; j < cz; ++j) {
                        s += (p[off + j] - y[off + j]) * tz[off + j] - ty[off + j] * z[off + j];
                    }
                }
                out[0] = s / rz;
                break;
            }
        }
    }
}

void run_backward(const Graph& g, EvalContext& ctx, int seed_node,
                  std::span<const double> seed, bool with_tangent_adjoint,
                  ParamVector& out) {
    require_same_graph(g, ctx, "run_backward");
    if (!ctx.has_values_) throw ShapeError("run_backward: forward pass required first");
    const auto& nodes = g.nodes();
    const std::size_t top = static_cast<std::size_t>(seed_node);
    if (seed.size() != ctx.val_[top].size()) {
        throw ShapeError("run_backward: seed length mismatch");
    }

    for (std::size_t id = 0; id <= top; ++id) {
        ctx.adj_[id].assign(ctx.val_[id].size(), 0.0);
        if (with_tangent_adjoint) ctx.tadj_[id].assign(ctx.val_[id].size(), 0.0);
    }
    {
        auto& dst = with_tangent_adjoint ? ctx.tadj_[top] : ctx.adj_[top];
        std::copy(seed.begin(), seed.end(), dst.begin());
    }

    for (std::size_t id = top + 1; id-- > 0;) {
        const Node& n = nodes[id];
        if (n.kind == OpKind::Input || n.kind == OpKind::Param ||
            n.kind == OpKind::Const || n.kind == OpKind::Zeros) {
            continue;
        }
        const int R = ctx.rrows_[id];
        const int C = n.cols;
        const double* zbar = ctx.adj_[id].data();
        const double* tzbar = with_tangent_adjoint ? ctx.tadj_[id].data() : nullptr;

        switch (n.kind) {
            case OpKind::MatMul: {
                const std::size_t ia = static_cast<std::size_t>(n.a);
                const std::size_t ib = static_cast<std::size_t>(n.b);
                const auto ra = static_cast<std::size_t>(ctx.rrows_[ia]);
                const auto ka = static_cast<std::size_t>(g.node(n.a).cols);
                const auto nc = static_cast<std::size_t>(C);
                // A_bar += C_bar * B^T ; B_bar += A^T * C_bar
                kern::gemm_nt_acc(zbar, ctx.val_[ib].data(), ctx.adj_[ia].data(), ra, nc, ka);
                kern::gemm_tn_acc(ctx.val_[ia].data(), zbar, ctx.adj_[ib].data(), ra, ka, nc);
                if (with_tangent_adjoint) {
                    // dC = dA * B + A * dB contributes second-order terms.
                    kern::gemm_nt_acc(tzbar, ctx.tan_[ib].data(), ctx.adj_[ia].data(), ra, nc, ka);
                    kern::gemm_tn_acc(ctx.tan_[ia].data(), tzbar, ctx.adj_[ib].data(), ra, ka, nc);
                    kern::gemm_nt_acc(tzbar, ctx.val_[ib].data(), ctx.tadj_[ia].data(), ra, nc, ka);
                    kern::gemm_tn_acc(ctx.val_[ia].data(), tzbar, ctx.tadj_[ib].data(), ra, ka, nc);
                }
                break;
            }
            case OpKind::Add: {
                const std::size_t ia = static_cast<std::size_t>(n.a);
                const std::size_t ib = static_cast<std::size_t>(n.b);
                acc_sum(ctx.adj_[ia].data(), ctx.rrows_[ia], zbar, R, C);
                acc_sum(ctx.adj_[ib].data(), ctx.rrows_[ib], zbar, R, C);
                if (with_tangent_adjoint) {
                    acc_sum(ctx.tadj_[ia].data(), ctx.rrows_[ia], tzbar, R, C);
                    acc_sum(ctx.tadj_[ib].data(), ctx.rrows_[ib], tzbar, R, C);
                }
                break;
            }
            case OpKind::Mul: {
                const std::size_t ia = static_cast<std::size_t>(n.a);
                const std::size_t ib = static_cast<std::size_t>(n.b);
                const int ra = ctx.rrows_[ia];
                const int rb = ctx.rrows_[ib];
                acc_prod(ctx.adj_[ia].data(), ra, zbar, R, ctx.val_[ib].data(), rb, R, C);
                acc_prod(ctx.adj_[ib].data(), rb, zbar, R, ctx.val_[ia].data(), ra, R, C);
                if (with_tangent_adjoint) {
                    acc_prod(ctx.adj_[ia].data(), ra, tzbar, R, ctx.tan_[ib].data(), rb, R, C);
                    acc_prod(ctx.adj_[ib].data(), rb, tzbar, R, ctx.tan_[ia].data(), ra, R, C);
                    acc_prod(ctx.tadj_[ia].data(), ra, tzbar, R, ctx.val_[ib].data(), rb, R, C);
                    acc_prod(ctx.tadj_[ib].data(), rb, tzbar, R, ctx.val_[ia].data(), ra, R, C);
                }
                break;
            }
            case OpKind::Tanh: {
                const std::size_t ia = static_cast<std::size_t>(n.a);
                const auto& z = ctx.val_[id];
                auto& abar = ctx.adj_[ia];
                for (std::size_t i = 0; i < z.size(); ++i) {
                    abar[i] += (1.0 - z[i] * z[i]) * zbar[i];
                }
                if (with_tangent_adjoint) {
                    const auto& tz = ctx.tan_[id];
                    auto& tabar = ctx.tadj_[ia];
                    for (std::size_t i = 0; i < z.size(); ++i) {
                        // d/da[(1 - z^2) da] = -2 z dz along the primal input
                        abar[i] += -2.0 * z[i] * tz[i] * tzbar[i];
                        tabar[i] += (1.0 - z[i] * z[i]) * tzbar[i];
                    }
                }
                break;
            }
            case OpKind::Sigmoid: {
                const std::size_t ia = static_cast<std::size_t>(n.a);
                const auto& z = ctx.val_[id];
                auto& abar = ctx.adj_[ia];
                for (std::size_t i = 0; i < z.size(); ++i) {
                    abar[i] += z[i] * (1.0 - z[i]) * zbar[i];
                }
                if (with_tangent_adjoint) {
                    const auto& tz = ctx.tan_[id];
                    auto& tabar = ctx.tadj_[ia];
                    for (std::size_t i = 0; i < z.size(); ++i) {
                        abar[i] += (1.0 - 2.0 * z[i]) * tz[i] * tzbar[i];
                        tabar[i] += z[i] * (1.0 - z[i]) * tzbar[i];
                    }
                }
                break;
            }
            case OpKind::SliceCols: {
                const std::size_t ia = static_cast<std::size_t>(n.a);
                const int ca = g.node(n.a).cols;
                for (int i = 0; i < R; ++i) {
                    double* ap = ctx.adj_[ia].data() + static_cast<std::size_t>(i) * ca + n.lo;
                    const double* zp = zbar + static_cast<std::size_t>(i) * C;
                    for (int j = 0; j < C; ++j) ap[j] += zp[j];
                }
                if (with_tangent_adjoint) {
                    for (int i = 0; i < R; ++i) {
                        double* ap = ctx.tadj_[ia].data() + static_cast<std::size_t>(i) * ca + n.lo;
                        const double* zp = tzbar + static_cast<std::size_t>(i) * C;
                        for (int j = 0; j < C; ++j) ap[j] += zp[j];
                    }
                }
                break;
            }
            case OpKind::ConcatCols: {
                const std::size_t ia = static_cast<std::size_t>(n.a);
                const std::size_t ib = static_cast<std::size_t>(n.b);
                const int ca = g.node(n.a).cols;
                const int cb = g.node(n.b).cols;
                for (int i = 0; i < R; ++i) {
                    const double* zp = zbar + static_cast<std::size_t>(i) * C;
                    double* ap = ctx.adj_[ia].data() + static_cast<std::size_t>(i) * ca;
                    double* bp = ctx.adj_[ib].data() + static_cast<std::size_t>(i) * cb;
                    for (int j = 0; j < ca; ++j) ap[j] += zp[j];
                    for (int j = 0; j < cb; ++j) bp[j] += zp[ca + j];
                }
                if (with_tangent_adjoint) {
                    for (int i = 0; i < R; ++i) {
                        const double* zp = tzbar + static_cast<std::size_t>(i) * C;
                        double* ap = ctx.tadj_[ia].data() + static_cast<std::size_t>(i) * ca;
                        double* bp = ctx.tadj_[ib].data() + static_cast<std::size_t>(i) * cb;
                        for (int j = 0; j < ca; ++j) ap[j] += zp[j];
                        for (int j = 0; j < cb; ++j) bp[j] += zp[ca + j];
                    }
                }
                break;
            }
            case OpKind::MeanRows: {
                const std::size_t ia = static_cast<std::size_t>(n.a);
                const int ra = ctx.rrows_[ia];
                const double inv = 1.0 / ra;
                for (int i = 0; i < ra; ++i) {
                    double* ap = ctx.adj_[ia].data() + static_cast<std::size_t>(i) * C;
                    for (int j = 0; j < C; ++j) ap[j] += zbar[j] * inv;
                }
                if (with_tangent_adjoint) {
                    for (int i = 0; i < ra; ++i) {
                        double* ap = ctx.tadj_[ia].data() + static_cast<std::size_t>(i) * C;
                        for (int j = 0; j < C; ++j) ap[j] += tzbar[j] * inv;
                    }
                }
                break;
            }
            case OpKind::MseLoss: {
                const std::size_t ia = static_cast<std::size_t>(n.a);
                const std::size_t ib = static_cast<std::size_t>(n.b);
                const double* z = ctx.val_[ia].data();
                const double* y = ctx.val_[ib].data();
                const int rz = ctx.rrows_[ia];
                const std::size_t nz = ctx.val_[ia].size();
                const double lb = zbar[0] / rz;
                auto& zb = ctx.adj_[ia];
                auto& yb = ctx.adj_[ib];
                for (std::size_t i = 0; i < nz; ++i) {
                    const double d = z[i] - y[i];
                    zb[i] += lb * d;
                    yb[i] -= lb * d;
                }
                if (with_tangent_adjoint) {
                    const double* tz = ctx.tan_[ia].data();
                    const double* ty = ctx.tan_[ib].data();
                    const double s = tzbar[0] / rz;
                    auto& tzb = ctx.tadj_[ia];
                    auto& tyb = ctx.tadj_[ib];
                    for (std::size_t i = 0; i < nz; ++i) {
                        const double d = z[i] - y[i];
                        const double td = tz[i] - ty[i];
                        zb[i] += s * td;
                        yb[i] -= s * td;
                        tzb[i] += s * d;
                        tyb[i] -= s * d;
                    }
                }
                break;
            }
            case OpKind::SoftmaxCeLoss: {
                const std::size_t ia = static_cast<std::size_t>(n.a);
                const std::size_t ib = static_cast<std::size_t>(n.b);
                const double* z = ctx.val_[ia].data();
                const double* y = ctx.val_[ib].data();
                const double* p = ctx.aux_[id].data();
                const int rz = ctx.rrows_[ia];
                const int cz = g.node(n.a).cols;
                const double lb = zbar[0] / rz;
                auto& zb = ctx.adj_[ia];
                auto& yb = ctx.adj_[ib];
                for (int i = 0; i < rz; ++i) {
                    const std::size_t off = static_cast<std::size_t>(i) * cz;
                    for (int j = 0; j < cz; ++j) {
                        zb[off + j] += lb * (p[off + j] - y[off + j]);
                        yb[off + j] -= lb * z[off + j];
                    }
                }
                if (with_tangent_adjoint) {
                    const double* tz = ctx.tan_[ia].data();
                    const double* ty = ctx.tan_[ib].data();
                    const double s = tzbar[0] / rz;
                    auto& tzb = ctx.tadj_[ia];
                    auto& tyb = ctx.tadj_[ib];
                    for (int i = 0; i < rz; ++i) {
                        const std::size_t off = static_cast<std::size_t>(i) * cz;
                        double pdz = 0.0;
                        for (int j = 0; j < cz; ++j) pdz += p[off + j] * tz[off + j];
                        for (int j = 0; j < cz; ++j) {
                            // H_loss applied to the logit tangent: p.*dz - p (p.dz)
                            zb[off + j] += s * (p[off + j] * (tz[off + j] - pdz) - ty[off + j]);
                            yb[off + j] -= s * tz[off + j];
                            tzb[off + j] += s * (p[off + j] - y[off + j]);
                            tyb[off + j] -= s * z[off + j];
                        }
                    }
                }
                break;
            }
            default:
                break;
        }
    }

    out.assign(g.param_count(), 0.0);
    for (const ParamEntry& e : g.layout()) {
        const auto& src = ctx.adj_[static_cast<std::size_t>(e.node)];
        std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(e.offset));
    }
}

ParamVector grad(const Graph& g, const Binding& binding, const ParamVector& w,
                 EvalContext& ctx, double* loss_out) {
    if (g.loss() < 0) throw ShapeError("grad: graph has no loss node");
    forward(g, binding, w, ctx);
    if (loss_out != nullptr) *loss_out = ctx.value(g.loss())[0];
    ParamVector out;
    const double one[1] = {1.0};
    run_backward(g, ctx, g.loss(), std::span<const double>(one, 1), false, out);
    return out;
}

Tensor jvp(const Graph& g, const Binding& binding, const ParamVector& w,
           const ParamVector& v, EvalContext& ctx) {
    if (g.output() < 0) throw ShapeError("jvp: graph has no output node");
    forward(g, binding, w, ctx);
    run_tangent(g, v, ctx);
    return ctx.tangent_tensor(g.output());
}

ParamVector hvp(const Graph& g, const Binding& binding, const ParamVector& w,
                const ParamVector& v, EvalContext& ctx) {
    if (g.loss() < 0) throw ShapeError("hvp: graph has no loss node");
    forward(g, binding, w, ctx);
    run_tangent(g, v, ctx);
    ParamVector out;
    const double one[1] = {1.0};
    run_backward(g, ctx, g.loss(), std::span<const double>(one, 1), true, out);
    return out;
}

Tensor loss_output_hessian_apply(LossKind kind, const Tensor& z, const Tensor& y,
                                 const Tensor& u) {
    if (!z.same_shape(y) || !z.same_shape(u)) {
        throw ShapeError("loss_output_hessian_apply: shapes disagree, z=" +
                         shape_str(z.shape) + " y=" + shape_str(y.shape) +
                         " u=" + shape_str(u.shape));
    }
    switch (kind) {
        case LossKind::Mse:
            return u;
        case LossKind::SoftmaxCe: {
            const int R = static_cast<int>(z.rows());
            const int C = static_cast<int>(z.cols());
            Tensor out = Tensor::zeros(z.shape);
            std::vector<double> p(static_cast<std::size_t>(R) * C);
            softmax_rows(z.data.data(), p.data(), R, C);
            for (int i = 0; i < R; ++i) {
                const std::size_t off = static_cast<std::size_t>(i) * C;
                double pu = 0.0;
                for (int j = 0; j < C; ++j) pu += p[off + j] * u.data[off + j];
                for (int j = 0; j < C; ++j) {
                    out.data[off + j] = p[off + j] * (u.data[off + j] - pu);
                }
            }
            return out;
        }
    }
    throw ShapeError("loss_output_hessian_apply: unknown loss kind");
}

namespace {

LossKind fused_loss_kind(const Graph& g) {
    if (g.loss() < 0) throw ShapeError("graph has no loss node");
    const Node& n = g.node(g.loss());
    if (n.kind == OpKind::MseLoss) return LossKind::Mse;
    if (n.kind == OpKind::SoftmaxCeLoss) return LossKind::SoftmaxCe;
    throw ShapeError("curvature products require a fused loss node");
}

}  // namespace

ParamVector ggn_vp_from_forward(const Graph& g, const ParamVector& v, EvalContext& ctx) {
    const LossKind kind = fused_loss_kind(g);
    const Node& loss_node = g.node(g.loss());
    const int z_node = loss_node.a;
    const int y_node = loss_node.b;

    run_tangent(g, v, ctx);

    const Tensor z = ctx.value_tensor(z_node);
    const Tensor y = ctx.value_tensor(y_node);
    const Tensor jv = ctx.tangent_tensor(z_node);
    Tensor u = loss_output_hessian_apply(kind, z, y, jv);

    // Mean over the curvature batch.
    const double inv = 1.0 / static_cast<double>(z.rows());
    for (double& x : u.data) x *= inv;

    ParamVector out;
    run_backward(g, ctx, z_node, u.data, false, out);
    return out;
}

ParamVector ggn_vp(const Graph& g, const Binding& curvature_batch, const ParamVector& w,
                   const ParamVector& v, EvalContext& ctx) {
    forward(g, curvature_batch, w, ctx);
    return ggn_vp_from_forward(g, v, ctx);
}

}  // namespace blockhf
