#include "blockhf/graph.hpp"

namespace blockhf {

int Graph::find_input(const std::string& name) const {
    for (int id : input_nodes_) {
        if (nodes_[static_cast<std::size_t>(id)].name == name) return id;
    }
    return -1;
}

const ParamEntry& Graph::param_entry(const std::string& name) const {
    for (const ParamEntry& e : layout_) {
        if (e.name == name) return e;
    }
    throw ShapeError("unknown parameter leaf '" + name + "'");
}

int GraphBuilder::push(Node n) {
    g_.nodes_.push_back(std::move(n));
    return static_cast<int>(g_.nodes_.size()) - 1;
}

const Node& GraphBuilder::at(int id) const {
    if (id < 0 || id >= static_cast<int>(g_.nodes_.size())) {
        throw ShapeError("node id " + std::to_string(id) + " out of range");
    }
    return g_.nodes_[static_cast<std::size_t>(id)];
}

int GraphBuilder::input(const std::string& name, int cols) {
    if (cols <= 0) throw ShapeError("input '" + name + "': cols must be positive");
    Node n;
    n.kind = OpKind::Input;
    n.rows = kBatchRows;
    n.cols = cols;
    n.name = name;
    int id = push(std::move(n));
    g_.input_nodes_.push_back(id);
    return id;
}

int GraphBuilder::param(const std::string& name, int rows, int cols,
                        InitKind init, double init_value) {
    if (rows <= 0 || cols <= 0) {
        throw ShapeError("param '" + name + "': dimensions must be positive");
    }
    Node n;
    n.kind = OpKind::Param;
    n.rows = rows;
    n.cols = cols;
    n.name = name;
    n.param_offset = g_.param_count_;
    int id = push(std::move(n));
    g_.param_nodes_.push_back(id);

    ParamEntry e;
    e.name = name;
    e.offset = g_.param_count_;
    e.rows = static_cast<std::size_t>(rows);
    e.cols = static_cast<std::size_t>(cols);
    e.node = id;
    e.init = init;
    e.init_value = init_value;
    g_.layout_.push_back(std::move(e));

    g_.param_count_ += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    return id;
}

int GraphBuilder::constant(int rows, int cols, std::vector<double> values) {
    if (rows <= 0 || cols <= 0 ||
        values.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
        throw ShapeError("constant: " + std::to_string(values.size()) +
                         " values do not fill " + std::to_string(rows) + "x" +
                         std::to_string(cols));
    }
    Node n;
    n.kind = OpKind::Const;
    n.rows = rows;
    n.cols = cols;
    n.payload = std::move(values);
    return push(std::move(n));
}

int GraphBuilder::zeros(int cols) {
    if (cols <= 0) throw ShapeError("zeros: cols must be positive");
    Node n;
    n.kind = OpKind::Zeros;
    n.rows = kBatchRows;
    n.cols = cols;
    return push(std::move(n));
}

int GraphBuilder::matmul(int a, int b) {
    const Node& na = at(a);
    const Node& nb = at(b);
    if (nb.rows == kBatchRows) {
        throw ShapeError("matmul: right operand must have fixed rows");
    }
    if (na.cols != nb.rows) {
        throw ShapeError("matmul: inner dimensions disagree (" +
                         std::to_string(na.cols) + " vs " + std::to_string(nb.rows) + ")");
    }
    Node n;
    n.kind = OpKind::MatMul;
    n.a = a;
    n.b = b;
    n.rows = na.rows;
    n.cols = nb.cols;
    return push(std::move(n));
}

namespace {

// Shared shape rule for Add/Mul: equal shapes, or one side is a fixed
// single-row tensor broadcast across the other's rows.
void binary_shape(const Node& na, const Node& nb, const char* what, int& rows, int& cols) {
    if (na.cols != nb.cols) {
        throw ShapeError(std::string(what) + ": column counts disagree (" +
                         std::to_string(na.cols) + " vs " + std::to_string(nb.cols) + ")");
    }
    cols = na.cols;
    if (na.rows == nb.rows) {
        rows = na.rows;
    } else if (nb.rows == 1) {
        rows = na.rows;
    } else if (na.rows == 1) {
        rows = nb.rows;
    } else {
        throw ShapeError(std::string(what) + ": row counts disagree (" +
                         std::to_string(na.rows) + " vs " + std::to_string(nb.rows) + ")");
    }
}

}  // namespace

int GraphBuilder::add(int a, int b) {
    Node n;
    n.kind = OpKind::Add;
    n.a = a;
    n.b = b;
    binary_shape(at(a), at(b), "add", n.rows, n.cols);
    return push(std::move(n));
}

int GraphBuilder::mul(int a, int b) {
    Node n;
    n.kind = OpKind::Mul;
    n.a = a;
    n.b = b;
    binary_shape(at(a), at(b), "mul", n.rows, n.cols);
    return push(std::move(n));
}

int GraphBuilder::tanh(int a) {
    const Node& na = at(a);
    Node n;
    n.kind = OpKind::Tanh;
    n.a = a;
    n.rows = na.rows;
    n.cols = na.cols;
    return push(std::move(n));
}

int GraphBuilder::sigmoid(int a) {
    const Node& na = at(a);
    Node n;
    n.kind = OpKind::Sigmoid;
    n.a = a;
    n.rows = na.rows;
    n.cols = na.cols;
    return push(std::move(n));
}

int GraphBuilder::slice_cols(int a, std::size_t lo, std::size_t hi) {
    const Node& na = at(a);
    if (!(lo < hi) || hi > static_cast<std::size_t>(na.cols)) {
        throw ShapeError("slice_cols: bounds [" + std::to_string(lo) + ", " +
                         std::to_string(hi) + ") invalid for " +
                         std::to_string(na.cols) + " columns");
    }
    Node n;
    n.kind = OpKind::SliceCols;
    n.a = a;
    n.rows = na.rows;
    n.cols = static_cast<int>(hi - lo);
    n.lo = lo;
    n.hi = hi;
    return push(std::move(n));
}

int GraphBuilder::concat_cols(int a, int b) {
    const Node& na = at(a);
    const Node& nb = at(b);
    if (na.rows != nb.rows) {
        throw ShapeError("concat_cols: row counts disagree (" +
                         std::to_string(na.rows) + " vs " + std::to_string(nb.rows) + ")");
    }
    Node n;
    n.kind = OpKind::ConcatCols;
    n.a = a;
    n.b = b;
    n.rows = na.rows;
    n.cols = na.cols + nb.cols;
    return push(std::move(n));
}

int GraphBuilder::mean_rows(int a) {
    const Node& na = at(a);
    Node n;
    n.kind = OpKind::MeanRows;
    n.a = a;
    n.rows = 1;
    n.cols = na.cols;
    return push(std::move(n));
}

int GraphBuilder::mse_loss(int z, int y) {
    const Node& nz = at(z);
    const Node& ny = at(y);
    if (nz.cols != ny.cols || nz.rows != ny.rows) {
        throw ShapeError("mse_loss: prediction and target shapes disagree");
    }
    Node n;
    n.kind = OpKind::MseLoss;
    n.a = z;
    n.b = y;
    n.rows = 1;
    n.cols = 1;
    return push(std::move(n));
}

int GraphBuilder::softmax_ce_loss(int z, int y) {
    const Node& nz = at(z);
    const Node& ny = at(y);
    if (nz.cols != ny.cols || nz.rows != ny.rows) {
        throw ShapeError("softmax_ce_loss: logits and target shapes disagree");
    }
    Node n;
    n.kind = OpKind::SoftmaxCeLoss;
    n.a = z;
    n.b = y;
    n.rows = 1;
    n.cols = 1;
    return push(std::move(n));
}

void GraphBuilder::set_output(int id) {
    at(id);
    g_.output_ = id;
}

void GraphBuilder::set_loss(int id) {
    const Node& n = at(id);
    if (n.rows != 1 || n.cols != 1) {
        throw ShapeError("loss node must be scalar, got " + std::to_string(n.rows) +
                         "x" + std::to_string(n.cols));
    }
    g_.loss_ = id;
}

Graph GraphBuilder::finish() {
    return std::move(g_);
}

}  // namespace blockhf
