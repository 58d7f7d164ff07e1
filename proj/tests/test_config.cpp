#include <doctest.h>

#include <filesystem>
#include <string>

#include "blockhf/config.hpp"

using namespace blockhf;

namespace {

const char* kMinimal = R"(
# minimal synthetic autoencoder run
[model]
kind = autoencoder
layers = 8-4

[optimizer]
kind = block-hf
partition = autoencoder-2block

[data]
source = synthetic
synth_dim = 8

[run]
seed = 7
gradient_batch = 16
curvature_batch = 4
)";

}  // namespace

TEST_CASE("minimal config parses with documented defaults") {
    const ExperimentConfig cfg = parse_config(kMinimal);
    CHECK(cfg.seed == 7);
    CHECK(cfg.optimizer == ExperimentConfig::Opt::BlockHf);
    CHECK(cfg.partition == "autoencoder-2block");
    CHECK(cfg.hf.alpha == 0.1);
    CHECK(cfg.hf.cg.max_iters == 30);
    CHECK(cfg.hf.cg.damping == 0.0);
    CHECK(cfg.hf.warm_start_decay == 0.95);
    CHECK(cfg.hf.parallel_blocks == false);
    CHECK(cfg.adam.lr == 0.001);
    CHECK(cfg.adam.beta1 == 0.9);
    CHECK(cfg.adam.beta2 == 0.999);
    CHECK(cfg.adam.eps == 1e-8);
    CHECK(cfg.polyak == 0.0);
    CHECK(cfg.eval_every == 10);
    CHECK(cfg.early_stop_patience == 10);
    CHECK(cfg.csv_path == "metrics.csv");
    CHECK(cfg.wall_clock == false);
    CHECK(cfg.model_spec().kind == ModelSpec::Kind::Autoencoder);
}

TEST_CASE("unknown optimizer kind names the key and the allowed values") {
    std::string text = kMinimal;
    const auto pos = text.find("kind = block-hf");
    text.replace(pos, 15, "kind = adamm   ");
    try {
        parse_config(text);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("kind") != std::string::npos);
        CHECK(msg.find("block-hf") != std::string::npos);
        CHECK(msg.find("adam") != std::string::npos);
        CHECK(msg.find("adamm") != std::string::npos);
    }
}

TEST_CASE("curvature batch larger than gradient batch is rejected") {
    std::string text = kMinimal;
    const auto pos = text.find("gradient_batch = 16");
    text.replace(pos, 19, "gradient_batch = 2 ");
    CHECK_THROWS_AS(parse_config(text), ConfigError);
}

TEST_CASE("missing seed is a parse error") {
    std::string text = kMinimal;
    const auto pos = text.find("seed = 7");
    text.replace(pos, 8, "# seed  ");
    CHECK_THROWS_AS(parse_config(text), ConfigError);
}

TEST_CASE("unknown keys are hard errors with line numbers") {
    std::string text = kMinimal;
    text += "\ntypo_key = 3\n";
    try {
        parse_config(text);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("typo_key") != std::string::npos);
        CHECK(msg.find("line") != std::string::npos);
    }
}

TEST_CASE("unknown sections and malformed lines are rejected") {
    CHECK_THROWS_AS(parse_config("[nope]\nseed = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[run]\nseed\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("seed = 1\n"), ConfigError);  // before any section
}

TEST_CASE("hf optimizer rejects non-single partitions") {
    std::string text = kMinimal;
    auto pos = text.find("kind = block-hf");
    text.replace(pos, 15, "kind = hf      ");
    CHECK_THROWS_AS(parse_config(text), ConfigError);

    // without the partition key it quietly becomes single-block
    pos = text.find("partition = autoencoder-2block");
    text.replace(pos, 30, "#                             ");
    const ExperimentConfig cfg = parse_config(text);
    CHECK(cfg.optimizer == ExperimentConfig::Opt::Hf);
    CHECK(cfg.partition == "single");
}

TEST_CASE("model preset names are validated at parse time") {
    std::string text = kMinimal;
    const auto pos = text.find("kind = autoencoder");
    text.replace(pos, 18, "preset = nosuch   ");
    CHECK_THROWS_AS(parse_config(text), ConfigError);
}

TEST_CASE("lstm on synthetic data is rejected") {
    const char* text = R"(
[model]
preset = lstm3x10
[optimizer]
kind = adam
[data]
source = synthetic
[run]
seed = 1
)";
    CHECK_THROWS_AS(parse_config(text), ConfigError);
}

TEST_CASE("mnist source requires a directory") {
    const char* text = R"(
[model]
preset = lstm3x10
[optimizer]
kind = adam
[data]
source = mnist
[run]
seed = 1
)";
    CHECK_THROWS_AS(parse_config(text), ConfigError);
}

TEST_CASE("numeric and boolean values are type-checked") {
    std::string text = kMinimal;
    text += "\n[run]\nmax_loops = soon\n";
    CHECK_THROWS_AS(parse_config(text), ConfigError);

    std::string text2 = kMinimal;
    text2 += "\n[optimizer]\nparallel_blocks = maybe\n";
    CHECK_THROWS_AS(parse_config(text2), ConfigError);

    std::string text3 = kMinimal;
    text3 += "\n[run]\npolyak = 1.5\n";
    CHECK_THROWS_AS(parse_config(text3), ConfigError);
}

TEST_CASE("every shipped config parses cleanly") {
    namespace fs = std::filesystem;
    std::size_t seen = 0;
    for (const auto& entry : fs::directory_iterator(BLOCKHF_CONFIGS_DIR)) {
        if (entry.path().extension() != ".conf") continue;
        CAPTURE(entry.path().string());
        CHECK_NOTHROW(load_config_file(entry.path().string()));
        ++seen;
    }
    CHECK(seen >= 5);
}

TEST_CASE("seq_mode switches the lstm geometry") {
    const char* pixels = R"(
[model]
preset = lstm3x10
[optimizer]
kind = adam
[data]
source = mnist
dir = /tmp/nowhere
seq_mode = pixels
[run]
seed = 1
)";
    const ExperimentConfig a = parse_config(pixels);
    const ModelSpec sa = a.model_spec();
    CHECK(sa.input_features == 1);
    CHECK(sa.seq_len == 49);

    std::string rows = pixels;
    const auto pos = rows.find("seq_mode = pixels");
    rows.replace(pos, 17, "seq_mode = rows  ");
    const ExperimentConfig b = parse_config(rows);
    const ModelSpec sb = b.model_spec();
    CHECK(sb.input_features == 7);
    CHECK(sb.seq_len == 7);
}
