#include "blockhf/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <set>
#include <thread>

#include "blockhf/tensor.hpp"

namespace blockhf {

void BlockPartition::scatter(std::size_t b, std::span<const double> vb,
                             std::span<double> full) const {
    const Block& blk = blocks[b];
    if (vb.size() != blk.size || full.size() != total) {
        throw ShapeError("scatter: block vector length " + std::to_string(vb.size()) +
                         " does not match block '" + blk.name + "' size " +
                         std::to_string(blk.size));
    }
    std::size_t pos = 0;
    for (const auto& [offset, len] : blk.ranges) {
        std::copy(vb.begin() + static_cast<std::ptrdiff_t>(pos),
                  vb.begin() + static_cast<std::ptrdiff_t>(pos + len),
                  full.begin() + static_cast<std::ptrdiff_t>(offset));
        pos += len;
    }
}

void BlockPartition::gather(std::size_t b, std::span<const double> full,
                            std::span<double> vb) const {
    const Block& blk = blocks[b];
    if (vb.size() != blk.size || full.size() != total) {
        throw ShapeError("gather: block vector length " + std::to_string(vb.size()) +
                         " does not match block '" + blk.name + "' size " +
                         std::to_string(blk.size));
    }
    std::size_t pos = 0;
    for (const auto& [offset, len] : blk.ranges) {
        std::copy(full.begin() + static_cast<std::ptrdiff_t>(offset),
                  full.begin() + static_cast<std::ptrdiff_t>(offset + len),
                  vb.begin() + static_cast<std::ptrdiff_t>(pos));
        pos += len;
    }
}

BlockPartition make_partition(
    const Graph& g,
    const std::vector<std::pair<std::string, std::vector<std::string>>>& groups) {
    BlockPartition part;
    part.total = g.param_count();
    std::set<std::string> seen;
    for (const auto& [name, leaves] : groups) {
        if (leaves.empty()) {
            throw ConfigError("partition block '" + name + "' has no parameter leaves");
        }
        BlockPartition::Block blk;
        blk.name = name;
        for (const std::string& leaf : leaves) {
            if (!seen.insert(leaf).second) {
                throw ConfigError("parameter leaf '" + leaf + "' appears in two blocks");
            }
            const ParamEntry& e = g.param_entry(leaf);
            blk.leaves.push_back(leaf);
            blk.ranges.emplace_back(e.offset, e.rows * e.cols);
            blk.size += e.rows * e.cols;
        }
        part.blocks.push_back(std::move(blk));
    }
    if (seen.size() != g.layout().size()) {
        throw ConfigError("partition covers " + std::to_string(seen.size()) + " of " +
                          std::to_string(g.layout().size()) + " parameter leaves");
    }
    return part;
}

BlockPartition partition_preset(const Graph& g, const std::string& name) {
    std::vector<std::pair<std::string, std::vector<std::string>>> groups;
    if (name == "single") {
        groups.emplace_back("all", std::vector<std::string>{});
        for (const ParamEntry& e : g.layout()) groups[0].second.push_back(e.name);
    } else if (name == "autoencoder-2block") {
        groups.emplace_back("encoder", std::vector<std::string>{});
        groups.emplace_back("decoder", std::vector<std::string>{});
        for (const ParamEntry& e : g.layout()) {
            if (e.name.rfind("enc", 0) == 0) {
                groups[0].second.push_back(e.name);
            } else if (e.name.rfind("dec", 0) == 0) {
                groups[1].second.push_back(e.name);
            } else {
                throw ConfigError("autoencoder-2block: unexpected leaf '" + e.name + "'");
            }
        }
    } else if (name == "lstm-3block") {
        // One block per LSTM layer; the fully-connected head rides with the
        // top layer.
        std::vector<std::string> layer_ids;
        for (const ParamEntry& e : g.layout()) {
            if (e.name.rfind("l", 0) == 0) {
                const std::string id = e.name.substr(0, e.name.find('.'));
                if (layer_ids.empty() || layer_ids.back() != id) layer_ids.push_back(id);
            }
        }
        if (layer_ids.empty()) {
            throw ConfigError("lstm-3block: no LSTM layer leaves found");
        }
        for (const std::string& id : layer_ids) {
            groups.emplace_back(id, std::vector<std::string>{});
        }
        for (const ParamEntry& e : g.layout()) {
            if (e.name.rfind("head.", 0) == 0) {
                groups.back().second.push_back(e.name);
            } else {
                const std::string id = e.name.substr(0, e.name.find('.'));
                bool placed = false;
                for (auto& [gname, leaves] : groups) {
                    if (gname == id) {
                        leaves.push_back(e.name);
                        placed = true;
                        break;
                    }
                }
                if (!placed) {
                    throw ConfigError("lstm-3block: unexpected leaf '" + e.name + "'");
                }
            }
        }
    } else {
        throw ConfigError("unknown partition preset '" + name +
                          "' (available: single, autoencoder-2block, lstm-3block)");
    }
    return make_partition(g, groups);
}

std::vector<std::string> partition_preset_names() {
    return {"single", "autoencoder-2block", "lstm-3block"};
}

HFWorkspace::HFWorkspace(const Graph& g, std::size_t n_blocks) : grad_ctx(g) {
    block_ctxs.reserve(n_blocks);
    for (std::size_t i = 0; i < n_blocks; ++i) block_ctxs.emplace_back(g);
}

LinearOperator make_block_operator(const Graph& g, const BlockPartition& part,
                                   std::size_t b, const Binding& curvature_batch,
                                   const ParamVector& w, EvalContext& ctx) {
    if (b >= part.count()) {
        throw ShapeError("block index " + std::to_string(b) + " out of range (" +
                         std::to_string(part.count()) + " blocks)");
    }
    forward(g, curvature_batch, w, ctx);

    LinearOperator op;
    op.dim = part.blocks[b].size;
    op.apply = [&g, &part, b, &ctx](std::span<const double> vb, std::span<double> out) {
        ParamVector full(part.total, 0.0);
        part.scatter(b, vb, full);
        const ParamVector gv = ggn_vp_from_forward(g, full, ctx);
        part.gather(b, gv, out);
    };
    return op;
}

StepDiagnostics block_hf_step(TrainerState& state, const Graph& g,
                              const BlockPartition& part, const Binding& grad_batch,
                              std::size_t curvature_rows, const HFConfig& cfg,
                              HFWorkspace& ws) {
    const std::size_t B = part.count();
    if (ws.block_ctxs.size() < B) {
        throw ShapeError("workspace has " + std::to_string(ws.block_ctxs.size()) +
                         " block contexts for " + std::to_string(B) + " blocks");
    }
    if (state.prev_block_solutions.size() != B) {
        state.prev_block_solutions.assign(B, {});
        for (std::size_t b = 0; b < B; ++b) {
            state.prev_block_solutions[b].assign(part.blocks[b].size, 0.0);
        }
    }

    StepDiagnostics diag;
    const ParamVector gradient = grad(g, grad_batch, state.w, ws.grad_ctx, &diag.train_loss);
    if (!std::isfinite(diag.train_loss)) {
        throw NumericError("block_hf_step: non-finite loss at loop " +
                           std::to_string(state.loop));
    }
    for (double v : gradient) {
        if (!std::isfinite(v)) {
            throw NumericError("block_hf_step: non-finite gradient at loop " +
                               std::to_string(state.loop));
        }
    }
    diag.grad_norm = norm2(gradient);

    // The curvature batch is the leading rows of each bound gradient tensor.
    std::vector<Tensor> curv_tensors;
    curv_tensors.reserve(grad_batch.entries.size());
    Binding curv;
    for (const auto& [node, tensor] : grad_batch.entries) {
        const std::size_t rows = tensor->rows();
        if (curvature_rows == 0 || curvature_rows > rows) {
            throw ShapeError("curvature batch size " + std::to_string(curvature_rows) +
                             " must be in [1, " + std::to_string(rows) +
                             "] (subset of the gradient batch)");
        }
        const std::size_t c = tensor->cols();
        Tensor prefix = Tensor::matrix(curvature_rows, c);
        std::copy(tensor->data.begin(),
                  tensor->data.begin() + static_cast<std::ptrdiff_t>(curvature_rows * c),
                  prefix.data.begin());
        curv_tensors.push_back(std::move(prefix));
        curv.bind(node, curv_tensors.back());
    }

    diag.blocks.resize(B);
    std::vector<CGResult> results(B);
    auto solve_block = [&](std::size_t b) {
        std::vector<double> g_b(part.blocks[b].size);
        part.gather(b, gradient, g_b);

        std::vector<double> x0 = state.prev_block_solutions[b];
        for (double& v : x0) v *= cfg.warm_start_decay;

        LinearOperator op = damp(
            make_block_operator(g, part, b, curv, state.w, ws.block_ctxs[b]),
            cfg.cg.damping);
        results[b] = cg_solve(op, g_b, x0, cfg.cg);

        BlockStepInfo& info = diag.blocks[b];
        info.name = part.blocks[b].name;
        info.size = part.blocks[b].size;
        info.cg_iterations = results[b].iterations;
        info.q_start = results[b].q_history.front();
        info.q_final = results[b].q_history.back();
    };

    if (cfg.parallel_blocks && B > 1) {
        // Sub-solves touch disjoint state; aggregation below keeps the fixed
        // block order, so parallel and serial runs agree bitwise.
        std::vector<std::thread> threads;
        std::vector<std::exception_ptr> errors(B);
        threads.reserve(B);
        for (std::size_t b = 0; b < B; ++b) {
            threads.emplace_back([&, b] {
                try {
                    solve_block(b);
                } catch (...) {
                    errors[b] = std::current_exception();
                }
            });
        }
        for (auto& t : threads) t.join();
        for (const auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    } else {
        for (std::size_t b = 0; b < B; ++b) solve_block(b);
    }

    ParamVector delta(part.total, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        part.scatter(b, results[b].x, delta);
        state.prev_block_solutions[b] = std::move(results[b].x);
    }
    axpy_inplace(cfg.alpha, delta, state.w);
    state.loop += 1;
    return diag;
}

void adam_step(TrainerState& state, const ParamVector& gradient, const AdamConfig& cfg) {
    const std::size_t n = state.w.size();
    if (gradient.size() != n) {
        throw ShapeError("adam_step: gradient length " + std::to_string(gradient.size()) +
                         " does not match parameter count " + std::to_string(n));
    }
    if (state.adam_m.size() != n) state.adam_m.assign(n, 0.0);
    if (state.adam_v.size() != n) state.adam_v.assign(n, 0.0);
    for (double v : gradient) {
        if (!std::isfinite(v)) {
            throw NumericError("adam_step: non-finite gradient at step " +
                               std::to_string(state.adam_t + 1));
        }
    }

    state.adam_t += 1;
    const double t = static_cast<double>(state.adam_t);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < n; ++i) {
        state.adam_m[i] = cfg.beta1 * state.adam_m[i] + (1.0 - cfg.beta1) * gradient[i];
        state.adam_v[i] = cfg.beta2 * state.adam_v[i] + (1.0 - cfg.beta2) * gradient[i] * gradient[i];
        const double mhat = state.adam_m[i] / bc1;
        const double vhat = state.adam_v[i] / bc2;
        state.w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    state.loop += 1;
}

void polyak_update(ParamVector& avg, const ParamVector& w, double decay) {
    if (avg.size() != w.size()) {
        throw ShapeError("polyak_update: length mismatch " + std::to_string(avg.size()) +
                         " vs " + std::to_string(w.size()));
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
        avg[i] = decay * avg[i] + (1.0 - decay) * w[i];
    }
}

}  // namespace blockhf
