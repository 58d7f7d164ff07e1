#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "blockhf/config.hpp"
#include "blockhf/data.hpp"
#include "blockhf/models.hpp"
#include "blockhf/optimizer.hpp"

namespace blockhf {

// One evaluation record; the CSV schema is the fields in this order, with
// per-block CG iteration counts and final quadratic-model values appended.
struct MetricsRow {
    std::size_t update = 0;
    std::size_t epoch = 0;
    double wall_seconds = 0.0;
    double train_loss = 0.0;
    double eval_loss = 0.0;
    std::optional<double> eval_accuracy;  // classification only
    double grad_norm = 0.0;
    std::vector<std::size_t> block_cg_iters;
    std::vector<double> block_q_final;
};

// Everything an experiment needs, assembled from a validated config:
// model graph, datasets, batch stream, optimizer state, workspaces. Both
// run_experiment and the acceptance checks drive training through this.
class TrainLoop {
public:
    explicit TrainLoop(const ExperimentConfig& cfg);

    // One optimizer update on the next gradient/curvature batch pair.
    StepDiagnostics step();

    struct EvalMetrics {
        double loss = 0.0;
        std::optional<double> accuracy;
    };

    // Metrics on the eval split; uses the Polyak average when enabled.
    EvalMetrics evaluate();

    // Mean loss over the full training set with the current parameters.
    double train_set_loss();

    const Graph& graph() const { return graph_; }
    const BlockPartition& partition() const { return partition_; }
    TrainerState& state() { return state_; }
    const Dataset& train_data() const { return train_; }
    const Dataset& eval_data() const { return eval_; }
    std::size_t updates() const { return updates_; }
    std::size_t epoch() const { return stream_.epoch(); }
    std::size_t block_count() const;

private:
    struct Built;  // assembly helper, defined in trainer.cpp
    TrainLoop(const ExperimentConfig& cfg, Built&& built);

    double dataset_loss(const Dataset& ds, const ParamVector& w, double* accuracy);

    ExperimentConfig cfg_;
    Graph graph_;
    BlockPartition partition_;
    Dataset train_, eval_;
    BatchStream stream_;
    TrainerState state_;
    HFWorkspace ws_;
    EvalContext eval_ctx_;
    int x_node_ = -1, target_node_ = -1;
    Tensor batch_x_, batch_t_;  // keeps bound tensors alive across a step
    std::size_t updates_ = 0;
};

// Runs the configured experiment, writing one CSV row per evaluation.
// Returns 0 on success, 2 on numerical abort (partial CSV is flushed).
// Missing data or unwritable output throw IoError.
int run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr);

}  // namespace blockhf
