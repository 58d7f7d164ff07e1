#pragma once

#include <span>
#include <vector>

#include "blockhf/graph.hpp"
#include "blockhf/tensor.hpp"

namespace blockhf {

// Per-evaluation input bindings: input leaf node id -> tensor. Tensors must
// outlive the evaluation; all bound tensors share one row count (the batch).
struct Binding {
    std::vector<std::pair<int, const Tensor*>> entries;

    void bind(int node, const Tensor& t) { entries.emplace_back(node, &t); }
    const Tensor* find(int node) const;
};

// All mutable evaluation state for one graph: per-node value, tangent,
// adjoint and tangent-adjoint buffers. Single-owner; concurrent evaluations
// over a shared immutable Graph each use their own context.
class EvalContext {
public:
    explicit EvalContext(const Graph& g);

    const Graph& graph() const { return *graph_; }
    int batch() const { return batch_; }
    bool has_values() const { return has_values_; }

    std::span<const double> value(int id) const { return val_[idx(id)]; }
    std::span<const double> tangent(int id) const { return tan_[idx(id)]; }
    std::span<const double> adjoint(int id) const { return adj_[idx(id)]; }
    int realized_rows(int id) const { return rrows_[idx(id)]; }

    Tensor value_tensor(int id) const;
    Tensor tangent_tensor(int id) const;

private:
    static std::size_t idx(int id) { return static_cast<std::size_t>(id); }

    friend void forward(const Graph&, const Binding&, const ParamVector&, EvalContext&);
    friend void run_tangent(const Graph&, const ParamVector&, EvalContext&);
    friend void run_backward(const Graph&, EvalContext&, int, std::span<const double>,
                             bool, ParamVector&);

    void prepare(int batch);

    const Graph* graph_;
    int batch_ = -1;
    bool has_values_ = false;
    std::vector<std::vector<double>> val_, tan_, adj_, tadj_, aux_;
    std::vector<int> rrows_;
};

// Evaluates every node; afterwards ctx.value(id) is valid for any node.
void forward(const Graph& g, const Binding& binding, const ParamVector& w, EvalContext& ctx);

// Forward + value at the loss node.
double loss_value(const Graph& g, const Binding& binding, const ParamVector& w,
                  EvalContext& ctx);

// Reverse-mode gradient of the scalar loss in the canonical flattening order.
// Runs its own forward pass; the loss value lands in *loss_out when given.
ParamVector grad(const Graph& g, const Binding& binding, const ParamVector& w,
                 EvalContext& ctx, double* loss_out = nullptr);

// Forward-mode directional derivative of the output node along v: J v.
Tensor jvp(const Graph& g, const Binding& binding, const ParamVector& w,
           const ParamVector& v, EvalContext& ctx);

// Hessian-vector product H v computed as the reverse pass over the
// forward-mode tangent of the scalar loss (reverse over forward).
ParamVector hvp(const Graph& g, const Binding& binding, const ParamVector& w,
                const ParamVector& v, EvalContext& ctx);

// Analytic action of the loss Hessian with respect to network outputs:
// MSE (per-sample 0.5*||z-y||^2) has identity Hessian, so u comes back
// unchanged; softmax cross-entropy applies diag(p) - p p^T row by row.
Tensor loss_output_hessian_apply(LossKind kind, const Tensor& z, const Tensor& y,
                                 const Tensor& u);

// Damped-free Gauss-Newton product: mean over the bound batch of
// J^T H_loss (J v). Requires the graph's loss to be a fused loss applied to
// the output node.
ParamVector ggn_vp(const Graph& g, const Binding& curvature_batch, const ParamVector& w,
                   const ParamVector& v, EvalContext& ctx);

// Same, reusing the primal values already in ctx from a previous forward
// over the same binding and w. CG calls this once per iteration so the
// primal pass is paid only once per solve.
ParamVector ggn_vp_from_forward(const Graph& g, const ParamVector& v, EvalContext& ctx);

// Tangent-only pass over already-computed primal values, with parameter-leaf
// tangents seeded from v and input tangents zero.
void run_tangent(const Graph& g, const ParamVector& v, EvalContext& ctx);

// Reverse pass seeded with `seed` at node `seed_node` (primal cotangent).
// When with_tangent_adjoint is set the seed applies to the node's tangent
// instead and adjoints of tangent buffers are propagated as well.
// Accumulated parameter-leaf adjoints are written to `out`.
void run_backward(const Graph& g, EvalContext& ctx, int seed_node,
                  std::span<const double> seed, bool with_tangent_adjoint,
                  ParamVector& out);

}  // namespace blockhf
