#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "blockhf/errors.hpp"

namespace blockhf {

// Flattened parameter vector w. Layout metadata lives in the Graph that the
// vector belongs to; see Graph::layout().
using ParamVector = std::vector<double>;

enum class OpKind {
    Input,       // bound per evaluation, batch rows
    Param,       // trainable leaf, fixed shape, slice of w
    Const,       // fixed non-trainable tensor baked into the graph
    Zeros,       // all-zero batch-rows constant (initial LSTM state)
    MatMul,      // a(r x k) * b(k x c)
    Add,         // elementwise; one side may be a [1 x c] row broadcast
    Mul,         // elementwise; one side may be a [1 x c] row broadcast
    Tanh,
    Sigmoid,
    SliceCols,   // columns [lo, hi) of a
    ConcatCols,  // [a | b]
    MeanRows,    // column means, result has one row
    MseLoss,     // scalar: mean over rows of 0.5 * ||z_r - y_r||^2
    SoftmaxCeLoss,  // scalar: mean over rows of logsumexp(z_r) - y_r . z_r
};

enum class LossKind { Mse, SoftmaxCe };

// How a parameter leaf is filled by init_params.
enum class InitKind { GlorotUniform, Zero, Const };

// Row count sentinel: realized as the batch size at evaluation time.
inline constexpr int kBatchRows = -1;

struct Node {
    OpKind kind;
    int a = -1;           // first input node
    int b = -1;           // second input node
    int rows = 0;         // kBatchRows or a fixed count
    int cols = 0;
    std::size_t lo = 0, hi = 0;       // SliceCols bounds
    std::size_t param_offset = 0;     // Param: offset into w
    std::string name;                 // Input/Param leaves
    std::vector<double> payload;      // Const data
};

struct ParamEntry {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0, cols = 0;
    int node = -1;
    InitKind init = InitKind::GlorotUniform;
    double init_value = 0.0;  // Const payload
};

// Immutable record of primitive operations, topologically ordered by
// construction. Parameter leaves define the canonical flattening order of w.
class Graph {
public:
    const std::vector<Node>& nodes() const { return nodes_; }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    const std::vector<int>& param_nodes() const { return param_nodes_; }
    const std::vector<int>& input_nodes() const { return input_nodes_; }
    const std::vector<ParamEntry>& layout() const { return layout_; }
    std::size_t param_count() const { return param_count_; }

    int output() const { return output_; }
    int loss() const { return loss_; }

    // Leaf lookup by name; -1 when absent.
    int find_input(const std::string& name) const;
    const ParamEntry& param_entry(const std::string& name) const;

private:
    friend class GraphBuilder;
    std::vector<Node> nodes_;
    std::vector<int> param_nodes_;
    std::vector<int> input_nodes_;
    std::vector<ParamEntry> layout_;
    std::size_t param_count_ = 0;
    int output_ = -1;
    int loss_ = -1;
};

// Shape-checked construction. Node ids are indices into the node list, so
// every edge points backwards and the list is already a topological order.
class GraphBuilder {
public:
    int input(const std::string& name, int cols);
    int param(const std::string& name, int rows, int cols,
              InitKind init = InitKind::GlorotUniform, double init_value = 0.0);
    int constant(int rows, int cols, std::vector<double> values);
    int zeros(int cols);

    int matmul(int a, int b);
    int add(int a, int b);
    int mul(int a, int b);
    int tanh(int a);
    int sigmoid(int a);
    int slice_cols(int a, std::size_t lo, std::size_t hi);
    int concat_cols(int a, int b);
    int mean_rows(int a);
    int mse_loss(int z, int y);
    int softmax_ce_loss(int z, int y);

    void set_output(int id);
    void set_loss(int id);

    Graph finish();

private:
    int push(Node n);
    const Node& at(int id) const;
    Graph g_;
};

}  // namespace blockhf
