#include "blockhf/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace blockhf {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
    throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

double parse_double(const std::string& v, std::size_t line, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return d;
    } catch (...) {
        fail(line, "key '" + key + "' expects a number, got '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& v, std::size_t line, const std::string& key) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size()) {
        fail(line, "key '" + key + "' expects a nonnegative integer, got '" + v + "'");
    }
    return out;
}

bool parse_bool(const std::string& v, std::size_t line, const std::string& key) {
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    fail(line, "key '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<std::size_t> parse_sizes(const std::string& v, std::size_t line,
                                     const std::string& key) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string piece;
    while (std::getline(ss, piece, '-')) {
        out.push_back(static_cast<std::size_t>(parse_u64(trim(piece), line, key)));
    }
    if (out.empty()) fail(line, "key '" + key + "' expects sizes like 64-32-16");
    return out;
}

}  // namespace

ModelSpec ExperimentConfig::model_spec() const {
    const std::size_t seq_features = seq_mode == SeqMode::Pixels ? 1 : 7;
    const std::size_t seq_len = seq_mode == SeqMode::Pixels ? 49 : 7;
    if (!model_preset.empty()) {
        return blockhf::model_preset(model_preset, seq_features, seq_len);
    }
    if (model_kind == ModelSpec::Kind::Autoencoder) {
        return autoencoder_spec(encoder_sizes);
    }
    return lstm_spec(lstm_layers, hidden, seq_features, classes, seq_len);
}

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    bool seen_seed = false;
    bool seen_opt_kind = false;
    bool partition_set = false;

    std::istringstream in(text);
    std::string raw;
    std::string section;
    std::size_t line_no = 0;

    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = raw;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']') fail(line_no, "malformed section header '" + line + "'");
            section = line.substr(1, line.size() - 2);
            if (section != "model" && section != "optimizer" && section != "data" &&
                section != "run") {
                fail(line_no, "unknown section [" + section +
                              "] (expected model, optimizer, data, run)");
            }
            continue;
        }

        const auto eq = line.find('=');
        if (eq == std::string::npos) fail(line_no, "expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) fail(line_no, "empty key");
        if (value.empty()) fail(line_no, "key '" + key + "' has no value");
        if (section.empty()) fail(line_no, "key '" + key + "' appears before any section");

        if (section == "model") {
            if (key == "preset") {
                cfg.model_preset = value;
            } else if (key == "kind") {
                if (value == "autoencoder") {
                    cfg.model_kind = ModelSpec::Kind::Autoencoder;
                } else if (value == "lstm") {
                    cfg.model_kind = ModelSpec::Kind::StackedLstm;
                } else {
                    fail(line_no, "key 'kind' expects autoencoder or lstm, got '" + value + "'");
                }
            } else if (key == "layers") {
                cfg.encoder_sizes = parse_sizes(value, line_no, key);
            } else if (key == "lstm_layers") {
                cfg.lstm_layers = parse_u64(value, line_no, key);
            } else if (key == "hidden") {
                cfg.hidden = parse_u64(value, line_no, key);
            } else if (key == "classes") {
                cfg.classes = parse_u64(value, line_no, key);
            } else {
                fail(line_no, "unknown key '" + key + "' in [model]");
            }
        } else if (section == "optimizer") {
            if (key == "kind") {
                seen_opt_kind = true;
                if (value == "block-hf") {
                    cfg.optimizer = ExperimentConfig::Opt::BlockHf;
                } else if (value == "hf") {
                    cfg.optimizer = ExperimentConfig::Opt::Hf;
                } else if (value == "adam") {
                    cfg.optimizer = ExperimentConfig::Opt::Adam;
                } else {
                    fail(line_no, "key 'kind' expects one of block-hf, hf, adam; got '" +
                                  value + "'");
                }
            } else if (key == "partition") {
                cfg.partition = value;
                partition_set = true;
            } else if (key == "alpha") {
                cfg.hf.alpha = parse_double(value, line_no, key);
            } else if (key == "damping") {
                cfg.hf.cg.damping = parse_double(value, line_no, key);
            } else if (key == "max_cg_iters") {
                cfg.hf.cg.max_iters = parse_u64(value, line_no, key);
            } else if (key == "cg_stop") {
                if (value == "relative_residual") {
                    cfg.hf.cg.stop.kind = StopCriterion::Kind::RelativeResidual;
                } else if (value == "quadratic_progress") {
                    cfg.hf.cg.stop.kind = StopCriterion::Kind::QuadraticProgress;
                } else {
                    fail(line_no, "key 'cg_stop' expects relative_residual or "
                                  "quadratic_progress, got '" + value + "'");
                }
            } else if (key == "cg_tol") {
                cfg.hf.cg.stop.tol = parse_double(value, line_no, key);
            } else if (key == "warm_start_decay") {
                cfg.hf.warm_start_decay = parse_double(value, line_no, key);
            } else if (key == "parallel_blocks") {
                cfg.hf.parallel_blocks = parse_bool(value, line_no, key);
            } else if (key == "adam_lr") {
                cfg.adam.lr = parse_double(value, line_no, key);
            } else if (key == "adam_beta1") {
                cfg.adam.beta1 = parse_double(value, line_no, key);
            } else if (key == "adam_beta2") {
                cfg.adam.beta2 = parse_double(value, line_no, key);
            } else if (key == "adam_eps") {
                cfg.adam.eps = parse_double(value, line_no, key);
            } else {
                fail(line_no, "unknown key '" + key + "' in [optimizer]");
            }
        } else if (section == "data") {
            if (key == "source") {
                if (value == "synthetic") {
                    cfg.source = ExperimentConfig::Source::Synthetic;
                } else if (value == "mnist") {
                    cfg.source = ExperimentConfig::Source::Mnist;
                } else {
                    fail(line_no, "key 'source' expects synthetic or mnist, got '" + value + "'");
                }
            } else if (key == "dir") {
                cfg.data_dir = value;
            } else if (key == "limit") {
                cfg.limit = parse_u64(value, line_no, key);
            } else if (key == "eval_limit") {
                cfg.eval_limit = parse_u64(value, line_no, key);
            } else if (key == "synth_samples") {
                cfg.synth_samples = parse_u64(value, line_no, key);
            } else if (key == "synth_eval_samples") {
                cfg.synth_eval_samples = parse_u64(value, line_no, key);
            } else if (key == "synth_dim") {
                cfg.synth_dim = parse_u64(value, line_no, key);
            } else if (key == "synth_rank") {
                cfg.synth_rank = parse_u64(value, line_no, key);
            } else if (key == "seq_mode") {
                if (value == "pixels") {
                    cfg.seq_mode = SeqMode::Pixels;
                } else if (value == "rows") {
                    cfg.seq_mode = SeqMode::Rows;
                } else {
                    fail(line_no, "key 'seq_mode' expects pixels or rows, got '" + value + "'");
                }
            } else {
                fail(line_no, "unknown key '" + key + "' in [data]");
            }
        } else {  // run
            if (key == "seed") {
                cfg.seed = parse_u64(value, line_no, key);
                seen_seed = true;
            } else if (key == "max_loops") {
                cfg.max_loops = parse_u64(value, line_no, key);
            } else if (key == "gradient_batch") {
                cfg.gradient_batch = parse_u64(value, line_no, key);
            } else if (key == "curvature_batch") {
                cfg.curvature_batch = parse_u64(value, line_no, key);
            } else if (key == "eval_every") {
                cfg.eval_every = parse_u64(value, line_no, key);
            } else if (key == "early_stop_patience") {
                cfg.early_stop_patience = parse_u64(value, line_no, key);
            } else if (key == "polyak") {
                cfg.polyak = parse_double(value, line_no, key);
            } else if (key == "csv") {
                cfg.csv_path = value;
            } else if (key == "wall_clock") {
                cfg.wall_clock = parse_bool(value, line_no, key);
            } else {
                fail(line_no, "unknown key '" + key + "' in [run]");
            }
        }
    }

    // Cross-field validation.
    if (!seen_seed) throw ConfigError("config is missing required key 'seed' in [run]");
    if (!seen_opt_kind) throw ConfigError("config is missing required key 'kind' in [optimizer]");
    if (cfg.curvature_batch > cfg.gradient_batch) {
        throw ConfigError("curvature_batch (" + std::to_string(cfg.curvature_batch) +
                          ") must not exceed gradient_batch (" +
                          std::to_string(cfg.gradient_batch) + ")");
    }
    if (cfg.curvature_batch == 0 || cfg.gradient_batch == 0) {
        throw ConfigError("batch sizes must be positive");
    }
    if (cfg.hf.alpha <= 0.0) throw ConfigError("alpha must be positive");
    if (cfg.hf.cg.damping < 0.0) throw ConfigError("damping must be nonnegative");
    if (cfg.hf.cg.stop.tol <= 0.0) throw ConfigError("cg_tol must be positive");
    if (cfg.polyak < 0.0 || cfg.polyak >= 1.0) {
        throw ConfigError("polyak decay must lie in [0, 1)");
    }
    if (cfg.max_loops == 0) throw ConfigError("max_loops must be positive");
    if (cfg.eval_every == 0) throw ConfigError("eval_every must be positive");
    if (cfg.optimizer == ExperimentConfig::Opt::Hf && partition_set &&
        cfg.partition != "single") {
        throw ConfigError("optimizer 'hf' is the single-block method; use block-hf "
                          "with partition '" + cfg.partition + "'");
    }
    if (cfg.optimizer == ExperimentConfig::Opt::Hf) cfg.partition = "single";
    if (cfg.model_preset.empty() && cfg.model_kind == ModelSpec::Kind::Autoencoder &&
        cfg.encoder_sizes.empty()) {
        throw ConfigError("autoencoder model needs 'layers' (or a preset)");
    }
    if (cfg.source == ExperimentConfig::Source::Mnist && cfg.data_dir.empty()) {
        throw ConfigError("data source 'mnist' needs 'dir'");
    }
    ModelSpec spec = cfg.model_spec();  // validates preset names and sizes
    if (spec.kind == ModelSpec::Kind::StackedLstm &&
        cfg.source == ExperimentConfig::Source::Synthetic) {
        throw ConfigError("synthetic data is reconstruction-only; LSTM models need "
                          "source = mnist");
    }

    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

}  // namespace blockhf
