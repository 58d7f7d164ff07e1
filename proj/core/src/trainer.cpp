#include "blockhf/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>

namespace blockhf {

namespace {

constexpr std::size_t kEvalChunk = 256;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct BuiltData {
    Dataset train;
    Dataset eval;
};

BuiltData build_data(const ExperimentConfig& cfg, Rng& master) {
    BuiltData out;
    if (cfg.source == ExperimentConfig::Source::Synthetic) {
        // One draw from one generative model; held-out rows become the eval
        // split so both splits share the same distribution.
        const std::uint64_t seed = master.next_u64();
        const Dataset all = synth_autoencoder_data(
            cfg.synth_samples + cfg.synth_eval_samples, cfg.synth_dim, cfg.synth_rank,
            seed);
        const std::size_t d = all.feature_dim();
        auto take = [&](std::size_t from, std::size_t count) {
            Tensor rows = Tensor::matrix(count, d);
            std::copy(all.inputs.data.begin() + static_cast<std::ptrdiff_t>(from * d),
                      all.inputs.data.begin() + static_cast<std::ptrdiff_t>((from + count) * d),
                      rows.data.begin());
            Dataset ds;
            ds.inputs = std::move(rows);
            ds.targets = ds.inputs;
            ds.classification = false;
            return ds;
        };
        out.train = take(0, cfg.synth_samples);
        out.eval = take(cfg.synth_samples, cfg.synth_eval_samples);
        out.eval.split = Dataset::Split::Test;
        return out;
    }
    namespace fs = std::filesystem;
    if (!fs::exists(fs::path(cfg.data_dir) / "train-images-idx3-ubyte")) {
        throw IoError(
            "MNIST files not found under '" + cfg.data_dir +
            "'. Expected train-images-idx3-ubyte, train-labels-idx1-ubyte, "
            "t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte. Download the four IDX "
            "files from an MNIST mirror, decompress them into that directory, and "
            "rerun; no network access is attempted.");
    }
    const bool sequence = cfg.model_spec().kind == ModelSpec::Kind::StackedLstm;
    if (sequence) {
        out.train = load_mnist_sequence(cfg.data_dir, Dataset::Split::Train, cfg.limit);
        out.eval = load_mnist_sequence(cfg.data_dir, Dataset::Split::Test, cfg.eval_limit);
    } else {
        out.train = load_mnist_autoencoder(cfg.data_dir, Dataset::Split::Train, cfg.limit);
        out.eval = load_mnist_autoencoder(cfg.data_dir, Dataset::Split::Test, cfg.eval_limit);
    }
    return out;
}

}  // namespace

struct TrainLoop::Built {
    Graph graph;
    BuiltData data;
    ParamVector w0;
    Rng stream_rng;

    explicit Built(const ExperimentConfig& cfg)
        : graph(build_model(cfg.model_spec())), stream_rng(0) {
        Rng master(cfg.seed);
        Rng init_rng = master.fork();
        stream_rng = master.fork();
        data = build_data(cfg, master);

        const int x_node = graph.find_input("x");
        const std::size_t expect = static_cast<std::size_t>(graph.node(x_node).cols);
        if (data.train.feature_dim() != expect) {
            throw ConfigError("model expects " + std::to_string(expect) +
                              " input features but the dataset provides " +
                              std::to_string(data.train.feature_dim()));
        }
        w0 = init_params(graph, init_rng);
    }
};

TrainLoop::TrainLoop(const ExperimentConfig& cfg) : TrainLoop(cfg, Built(cfg)) {}

TrainLoop::TrainLoop(const ExperimentConfig& cfg, Built&& b)
    : cfg_(cfg),
      graph_(std::move(b.graph)),
      partition_(partition_preset(graph_, cfg_.partition)),
      train_(std::move(b.data.train)),
      eval_(std::move(b.data.eval)),
      stream_(train_.size(), cfg_.gradient_batch, cfg_.curvature_batch, b.stream_rng),
      state_(),
      ws_(graph_, partition_.count()),
      eval_ctx_(graph_) {
    state_.w = std::move(b.w0);
    if (cfg_.polyak > 0.0) state_.polyak_avg.assign(state_.w.size(), 0.0);
    x_node_ = graph_.find_input("x");
    target_node_ = graph_.find_input("target");
}

std::size_t TrainLoop::block_count() const {
    return cfg_.optimizer == ExperimentConfig::Opt::Adam ? 0 : partition_.count();
}

StepDiagnostics TrainLoop::step() {
    const BatchPair pair = stream_.next();
    batch_x_ = gather_rows(train_.inputs, pair.grad_indices);
    batch_t_ = gather_rows(train_.targets, pair.grad_indices);
    Binding batch;
    batch.bind(x_node_, batch_x_);
    batch.bind(target_node_, batch_t_);

    StepDiagnostics diag;
    if (cfg_.optimizer == ExperimentConfig::Opt::Adam) {
        const ParamVector g = grad(graph_, batch, state_.w, ws_.grad_ctx, &diag.train_loss);
        if (!std::isfinite(diag.train_loss)) {
            throw NumericError("non-finite training loss at update " +
                               std::to_string(updates_ + 1));
        }
        diag.grad_norm = norm2(g);
        adam_step(state_, g, cfg_.adam);
    } else {
        diag = block_hf_step(state_, graph_, partition_, batch, pair.curvature_count,
                             cfg_.hf, ws_);
    }
    if (cfg_.polyak > 0.0) polyak_update(state_.polyak_avg, state_.w, cfg_.polyak);
    updates_ += 1;
    return diag;
}

double TrainLoop::dataset_loss(const Dataset& ds, const ParamVector& w, double* accuracy) {
    const std::size_t n = ds.size();
    double total = 0.0;
    std::size_t correct = 0;
    std::vector<std::size_t> idx(kEvalChunk);
    for (std::size_t done = 0; done < n;) {
        const std::size_t k = std::min(kEvalChunk, n - done);
        idx.resize(k);
        std::iota(idx.begin(), idx.end(), done);
        const Tensor x = gather_rows(ds.inputs, idx);
        const Tensor t = gather_rows(ds.targets, idx);
        Binding b;
        b.bind(x_node_, x);
        b.bind(target_node_, t);
        forward(graph_, b, w, eval_ctx_);
        total += eval_ctx_.value(graph_.loss())[0] * static_cast<double>(k);
        if (accuracy != nullptr && ds.classification) {
            const auto logits = eval_ctx_.value(graph_.output());
            const std::size_t classes = static_cast<std::size_t>(graph_.node(graph_.output()).cols);
            for (std::size_t i = 0; i < k; ++i) {
                std::size_t arg = 0;
                for (std::size_t j = 1; j < classes; ++j) {
                    if (logits[i * classes + j] > logits[i * classes + arg]) arg = j;
                }
                if (static_cast<int>(arg) == ds.labels[done + i]) ++correct;
            }
        }
        done += k;
    }
    if (accuracy != nullptr && ds.classification) {
        *accuracy = static_cast<double>(correct) / static_cast<double>(n);
    }
    return total / static_cast<double>(n);
}

TrainLoop::EvalMetrics TrainLoop::evaluate() {
    const ParamVector& w = cfg_.polyak > 0.0 ? state_.polyak_avg : state_.w;
    EvalMetrics m;
    double acc = 0.0;
    m.loss = dataset_loss(eval_, w, &acc);
    if (eval_.classification) m.accuracy = acc;
    return m;
}

double TrainLoop::train_set_loss() {
    return dataset_loss(train_, state_.w, nullptr);
}

int run_experiment(const ExperimentConfig& cfg, std::ostream* log) {
    TrainLoop loop(cfg);

    std::ofstream csv(cfg.csv_path);
    if (!csv) throw IoError("cannot open CSV output '" + cfg.csv_path + "'");

    csv << "update,epoch,wall_seconds,train_loss,eval_loss,eval_accuracy,grad_norm";
    for (std::size_t b = 1; b <= loop.block_count(); ++b) {
        csv << ",cg_iters_b" << b << ",cg_q_b" << b;
    }
    csv << "\n";
    csv.flush();

    const auto t0 = std::chrono::steady_clock::now();
    double best = std::numeric_limits<double>::infinity();
    std::size_t evals_since_best = 0;

    try {
        for (std::size_t k = 1; k <= cfg.max_loops; ++k) {
            const StepDiagnostics diag = loop.step();

            if (k % cfg.eval_every != 0 && k != cfg.max_loops) continue;

            const TrainLoop::EvalMetrics em = loop.evaluate();
            if (!std::isfinite(em.loss)) {
                throw NumericError("non-finite eval loss at update " + std::to_string(k));
            }

            double wall = 0.0;
            if (cfg.wall_clock) {
                wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                           .count();
            }

            char wall_buf[32];
            std::snprintf(wall_buf, sizeof(wall_buf), "%.3f", wall);
            csv << k << ',' << loop.epoch() << ',' << wall_buf << ','
                << fmt(diag.train_loss) << ',' << fmt(em.loss) << ','
                << (em.accuracy ? fmt(*em.accuracy) : "nan") << ',' << fmt(diag.grad_norm);
            for (const BlockStepInfo& info : diag.blocks) {
                csv << ',' << info.cg_iterations << ',' << fmt(info.q_final);
            }
            csv << "\n";
            csv.flush();

            if (cfg.early_stop_patience > 0) {
                if (em.loss < best) {
                    best = em.loss;
                    evals_since_best = 0;
                } else if (++evals_since_best >= cfg.early_stop_patience) {
                    if (log != nullptr) {
                        *log << "early stop after " << k << " updates (no eval improvement in "
                             << evals_since_best << " evals)\n";
                    }
                    break;
                }
            } else if (em.loss < best) {
                best = em.loss;
            }
        }
    } catch (const NumericError& e) {
        csv.flush();
        if (log != nullptr) *log << "numerical abort: " << e.what() << "\n";
        return 2;
    }

    if (log != nullptr) {
        *log << "done: " << loop.updates() << " updates, best eval loss " << best
             << ", metrics in " << cfg.csv_path << "\n";
    }
    return 0;
}

}  // namespace blockhf
