#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "blockhf/data.hpp"
#include "blockhf/models.hpp"
#include "blockhf/optimizer.hpp"

namespace blockhf {

// Parsed and validated experiment description. The text format is flat
// `key = value` lines under sections [model], [optimizer], [data], [run],
// with `#` comments. Unknown keys are hard errors and the seed is required,
// so no run carries implicit randomness.
struct ExperimentConfig {
    // [model]
    std::string model_preset;  // empty for custom models
    ModelSpec::Kind model_kind = ModelSpec::Kind::Autoencoder;
    std::vector<std::size_t> encoder_sizes;
    std::size_t lstm_layers = 3;
    std::size_t hidden = 10;
    std::size_t classes = 10;

    // [optimizer]
    enum class Opt { BlockHf, Hf, Adam };
    Opt optimizer = Opt::BlockHf;
    std::string partition = "single";
    HFConfig hf;
    AdamConfig adam;

    // [data]
    enum class Source { Synthetic, Mnist };
    Source source = Source::Synthetic;
    std::string data_dir;
    std::size_t limit = 0;       // mnist train subset, 0 = all
    std::size_t eval_limit = 0;  // mnist eval subset, 0 = all
    std::size_t synth_samples = 2000;
    std::size_t synth_eval_samples = 200;
    std::size_t synth_dim = 64;
    std::size_t synth_rank = 8;
    SeqMode seq_mode = SeqMode::Pixels;

    // [run]
    std::uint64_t seed = 0;
    std::size_t max_loops = 100;
    std::size_t gradient_batch = 512;
    std::size_t curvature_batch = 64;
    std::size_t eval_every = 10;
    std::size_t early_stop_patience = 10;  // 0 disables
    double polyak = 0.0;                   // 0 disables
    std::string csv_path = "metrics.csv";
    bool wall_clock = false;  // off by default so CSVs are byte-reproducible

    // Resolved model description (sequence geometry folded in).
    ModelSpec model_spec() const;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

}  // namespace blockhf
