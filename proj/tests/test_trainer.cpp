#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "blockhf/config.hpp"
#include "blockhf/trainer.hpp"

using namespace blockhf;

namespace {

std::string temp_dir() {
    static const std::string dir = [] {
        auto d = std::filesystem::temp_directory_path() / "blockhf_trainer_tests";
        std::filesystem::create_directories(d);
        return d.string();
    }();
    return dir;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string piece;
    while (std::getline(ss, piece, sep)) out.push_back(piece);
    return out;
}

std::string base_config(const std::string& csv, const std::string& extra_optimizer = "",
                        const std::string& extra_run = "") {
    return std::string(R"(
[model]
kind = autoencoder
layers = 12-6-3

[optimizer]
kind = block-hf
partition = autoencoder-2block
alpha = 0.3
damping = 0.01
max_cg_iters = 10
)") + extra_optimizer + R"(
[data]
source = synthetic
synth_dim = 12
synth_samples = 64
synth_eval_samples = 16
synth_rank = 3

[run]
seed = 11
max_loops = 12
gradient_batch = 16
curvature_batch = 8
eval_every = 3
)" + extra_run + "csv = " + csv + "\n";
}

}  // namespace

TEST_CASE("run_experiment writes schema-stable monotone CSV rows") {
    const std::string csv = temp_dir() + "/basic.csv";
    const ExperimentConfig cfg = parse_config(base_config(csv));
    CHECK(run_experiment(cfg) == 0);

    const std::string text = slurp(csv);
    const std::vector<std::string> lines = split(text, '\n');
    REQUIRE(lines.size() >= 2);
    CHECK(lines[0] ==
          "update,epoch,wall_seconds,train_loss,eval_loss,eval_accuracy,grad_norm,"
          "cg_iters_b1,cg_q_b1,cg_iters_b2,cg_q_b2");

    long prev_update = 0;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto fields = split(lines[i], ',');
        REQUIRE(fields.size() == 11);
        const long update = std::stol(fields[0]);
        CHECK(update > prev_update);
        prev_update = update;
        CHECK(std::isfinite(std::stod(fields[3])));
        CHECK(std::isfinite(std::stod(fields[4])));
        CHECK(fields[5] == "nan");  // reconstruction task has no accuracy
        CHECK(fields[2] == "0.000");  // wall clock off by default
    }
}

TEST_CASE("same config and seed give byte-identical CSVs") {
    const std::string csv1 = temp_dir() + "/det1.csv";
    const std::string csv2 = temp_dir() + "/det2.csv";
    CHECK(run_experiment(parse_config(base_config(csv1))) == 0);
    CHECK(run_experiment(parse_config(base_config(csv2))) == 0);
    CHECK(slurp(csv1) == slurp(csv2));
}

TEST_CASE("parallel blocks do not change a single CSV byte") {
    const std::string serial_csv = temp_dir() + "/serial.csv";
    const std::string parallel_csv = temp_dir() + "/parallel.csv";
    CHECK(run_experiment(parse_config(base_config(serial_csv))) == 0);
    CHECK(run_experiment(parse_config(
              base_config(parallel_csv, "parallel_blocks = true\n"))) == 0);

    const std::string a = slurp(serial_csv);
    const std::string b = slurp(parallel_csv);
    CHECK(a == b);

    // loss columns in particular
    const auto la = split(a, '\n');
    const auto lb = split(b, '\n');
    REQUIRE(la.size() == lb.size());
    for (std::size_t i = 1; i < la.size(); ++i) {
        if (la[i].empty()) continue;
        CHECK(split(la[i], ',')[3] == split(lb[i], ',')[3]);
        CHECK(split(la[i], ',')[4] == split(lb[i], ',')[4]);
    }
}

TEST_CASE("adam runs drop the per-block columns") {
    const std::string csv = temp_dir() + "/adam.csv";
    std::string text = base_config(csv);
    const auto pos = text.find("kind = block-hf");
    text.replace(pos, 15, "kind = adam    ");
    const auto ppos = text.find("partition = autoencoder-2block");
    text.replace(ppos, 30, "#                             ");
    CHECK(run_experiment(parse_config(text)) == 0);
    const auto lines = split(slurp(csv), '\n');
    CHECK(lines[0] == "update,epoch,wall_seconds,train_loss,eval_loss,eval_accuracy,grad_norm");
}

TEST_CASE("polyak-averaged evaluation starts biased toward zero") {
    // With decay 0.99 and a dozen updates the average is still close to the
    // zero vector, so eval loss under the average differs from the raw one.
    const std::string csv_raw = temp_dir() + "/raw.csv";
    const std::string csv_avg = temp_dir() + "/avg.csv";
    CHECK(run_experiment(parse_config(base_config(csv_raw))) == 0);
    CHECK(run_experiment(parse_config(base_config(csv_avg, "", "polyak = 0.99\n"))) == 0);
    const auto raw_lines = split(slurp(csv_raw), '\n');
    const auto avg_lines = split(slurp(csv_avg), '\n');
    const auto raw_last = split(raw_lines[raw_lines.size() - 2], ',');
    const auto avg_last = split(avg_lines[avg_lines.size() - 2], ',');
    CHECK(raw_last[4] != avg_last[4]);
}

TEST_CASE("early stopping halts before the loop budget") {
    const std::string csv = temp_dir() + "/early.csv";
    // Patience 1 with frequent evals on a quickly-plateauing run.
    std::string text = base_config(csv, "", "early_stop_patience = 1\n");
    auto pos = text.find("max_loops = 12");
    text.replace(pos, 14, "max_loops = 80");
    pos = text.find("eval_every = 3");
    text.replace(pos, 14, "eval_every = 1");
    pos = text.find("alpha = 0.3");
    text.replace(pos, 11, "alpha = 9.0");  // oscillates, eval loss soon worsens
    CHECK(run_experiment(parse_config(text)) == 0);
    const auto lines = split(slurp(csv), '\n');
    std::size_t rows = 0;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (!lines[i].empty()) ++rows;
    }
    CHECK(rows < 80);
}

TEST_CASE("TrainLoop exposes stepwise training for callers") {
    const ExperimentConfig cfg = parse_config(base_config(temp_dir() + "/unused.csv"));
    TrainLoop loop(cfg);
    CHECK(loop.train_data().size() == 64);
    CHECK(loop.eval_data().size() == 16);
    CHECK(loop.block_count() == 2);

    const double before = loop.train_set_loss();
    for (int k = 0; k < 6; ++k) {
        const StepDiagnostics diag = loop.step();
        CHECK(std::isfinite(diag.train_loss));
        CHECK(diag.blocks.size() == 2);
    }
    const double after = loop.train_set_loss();
    CHECK(after < before);  // six damped HF updates on an easy problem
    CHECK(loop.updates() == 6);

    const TrainLoop::EvalMetrics em = loop.evaluate();
    CHECK(std::isfinite(em.loss));
    CHECK(!em.accuracy.has_value());
}

TEST_CASE("missing mnist directory fails with instructions") {
    std::string text = R"(
[model]
preset = lstm3x10
[optimizer]
kind = adam
[data]
source = mnist
dir = /tmp/definitely-not-mnist
[run]
seed = 1
gradient_batch = 4
curvature_batch = 2
csv = )" + temp_dir() + "/never.csv\n";
    const ExperimentConfig cfg = parse_config(text);
    try {
        run_experiment(cfg);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("train-images-idx3-ubyte") != std::string::npos);
    }
}
