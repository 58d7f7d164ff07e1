#pragma once

#include <string>
#include <utility>
#include <vector>

#include "blockhf/autodiff.hpp"
#include "blockhf/cg.hpp"
#include "blockhf/graph.hpp"

namespace blockhf {

// Decomposition of the flattened parameter vector into named blocks, each a
// union of whole parameter-leaf ranges. Blocks are disjoint and jointly
// cover every leaf.
struct BlockPartition {
    struct Block {
        std::string name;
        std::vector<std::string> leaves;
        std::vector<std::pair<std::size_t, std::size_t>> ranges;  // (offset, length)
        std::size_t size = 0;
    };
    std::vector<Block> blocks;
    std::size_t total = 0;

    std::size_t count() const { return blocks.size(); }

    // Scatter a block vector into a full-length vector (rest untouched).
    void scatter(std::size_t b, std::span<const double> vb, std::span<double> full) const;
    // Gather the block slice of a full-length vector.
    void gather(std::size_t b, std::span<const double> full, std::span<double> vb) const;
};

// groups: (block name, leaf names). Every leaf of the graph must appear in
// exactly one group.
BlockPartition make_partition(
    const Graph& g,
    const std::vector<std::pair<std::string, std::vector<std::string>>>& groups);

// Named presets: "single" (B = 1, ordinary HF), "autoencoder-2block"
// (encoder | decoder), "lstm-3block" (one block per LSTM layer, the head
// joins the top layer's block).
BlockPartition partition_preset(const Graph& g, const std::string& name);
std::vector<std::string> partition_preset_names();

struct HFConfig {
    double alpha = 0.1;              // learning rate on the aggregated update
    CGConfig cg;                     // per-block sub-solver settings
    double warm_start_decay = 0.95;  // scale on the previous CG solution
    bool parallel_blocks = false;
};

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Optimizer state. prev_block_solutions hold the raw CG outputs (momentum
// lives in CG-solution space, before the alpha scaling).
struct TrainerState {
    ParamVector w;
    std::vector<std::vector<double>> prev_block_solutions;
    ParamVector adam_m, adam_v;
    std::size_t adam_t = 0;
    ParamVector polyak_avg;
    std::size_t loop = 0;
};

struct BlockStepInfo {
    std::string name;
    std::size_t size = 0;
    std::size_t cg_iterations = 0;
    double q_start = 0.0;
    double q_final = 0.0;
};

struct StepDiagnostics {
    double train_loss = 0.0;
    double grad_norm = 0.0;
    std::vector<BlockStepInfo> blocks;
};

// Reusable evaluation contexts: one for the gradient pass, one per block so
// the per-block sub-solves may run concurrently.
struct HFWorkspace {
    EvalContext grad_ctx;
    std::vector<EvalContext> block_ctxs;
    HFWorkspace(const Graph& g, std::size_t n_blocks);
};

// Matrix-free map v_b -> [G v]_b where v is v_b zero-extended outside block
// b and G is the batch-mean Gauss-Newton operator. Runs the primal forward
// over the curvature batch once, at construction; each apply then costs one
// tangent and one reverse sweep. The operator borrows graph, partition,
// batch tensors, w and ctx -- all must outlive it.
LinearOperator make_block_operator(const Graph& g, const BlockPartition& part,
                                   std::size_t b, const Binding& curvature_batch,
                                   const ParamVector& w, EvalContext& ctx);

// One loop of the block-diagonal Hessian-free method: gradient over the
// bound batch, damped CG sub-solve per block warm-started from the decayed
// previous solution, then w += alpha * [dw_1; ...; dw_B]. The curvature
// batch is the first curvature_rows rows of the gradient batch, which makes
// S_c a subset of S_g by construction.
StepDiagnostics block_hf_step(TrainerState& state, const Graph& g,
                              const BlockPartition& part, const Binding& grad_batch,
                              std::size_t curvature_rows, const HFConfig& cfg,
                              HFWorkspace& ws);

// Adam with bias correction; mutates state.w and the moment vectors.
void adam_step(TrainerState& state, const ParamVector& gradient, const AdamConfig& cfg);

// avg <- decay * avg + (1 - decay) * w.
void polyak_update(ParamVector& avg, const ParamVector& w, double decay);

}  // namespace blockhf
