#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "support/idx_io.hpp"

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;
};

RunResult run(const std::string& args) {
    const std::string cmd = std::string(BLOCKHF_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    RunResult res;
    std::array<char, 512> buf{};
    while (fgets(buf.data(), buf.size(), pipe) != nullptr) res.output += buf.data();
    const int status = pclose(pipe);
    res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return res;
}

std::string temp_dir() {
    static const std::string dir = [] {
        auto d = std::filesystem::temp_directory_path() / "blockhf_cli_tests";
        std::filesystem::create_directories(d);
        return d.string();
    }();
    return dir;
}

std::string slurp_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::string out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return out;
}

std::string write_config(const std::string& name, const std::string& csv) {
    const std::string path = temp_dir() + "/" + name;
    std::ofstream out(path);
    out << R"([model]
kind = autoencoder
layers = 10-4

[optimizer]
kind = hf
alpha = 0.3
damping = 0.01
max_cg_iters = 8

[data]
source = synthetic
synth_dim = 10
synth_samples = 32
synth_eval_samples = 8

[run]
seed = 3
max_loops = 6
gradient_batch = 8
curvature_batch = 4
eval_every = 2
csv = )" << csv
        << "\n";
    return path;
}

}  // namespace

TEST_CASE("presets subcommand lists the named presets") {
    const RunResult res = run("presets");
    CHECK(res.exit_code == 0);
    CHECK(res.output.find("autoencoder-mnist") != std::string::npos);
    CHECK(res.output.find("lstm3x10") != std::string::npos);
    CHECK(res.output.find("autoencoder-2block") != std::string::npos);
    CHECK(res.output.find("lstm-3block") != std::string::npos);
    CHECK(res.output.find("single") != std::string::npos);
}

TEST_CASE("train runs a config end to end and writes the CSV") {
    const std::string csv = temp_dir() + "/cli_run.csv";
    const std::string cfg = write_config("ok.conf", csv);
    const RunResult res = run("train " + cfg);
    CHECK(res.exit_code == 0);
    CHECK(std::filesystem::exists(csv));
}

TEST_CASE("invalid configs exit with the validation code and a line number") {
    const std::string path = temp_dir() + "/bad.conf";
    {
        std::ofstream out(path);
        out << "[optimizer]\nkind = adamm\n";
    }
    const RunResult res = run("train " + path);
    CHECK(res.exit_code == 1);
    CHECK(res.output.find("line") != std::string::npos);
}

TEST_CASE("missing config file exits with the validation code") {
    const RunResult res = run("train /tmp/blockhf-no-such-config.conf");
    CHECK(res.exit_code == 1);
}

TEST_CASE("runaway training aborts with the numeric exit code and a flushed CSV") {
    // Tiny classification corpus through the IDX pipeline; a pathological
    // learning rate overflows the logits within a few updates.
    const std::string dir = temp_dir() + "/abort-mnist";
    std::filesystem::create_directories(dir);
    const std::size_t n = 12;
    std::vector<unsigned char> px(n * 28 * 28);
    std::vector<unsigned char> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<unsigned char>(i % 10);
        for (std::size_t p = 0; p < 784; ++p) {
            px[i * 784 + p] = static_cast<unsigned char>((i * 53 + p * 7) % 256);
        }
    }
    testsupport::write_idx_images(dir + "/train-images-idx3-ubyte", px, n, 28, 28);
    testsupport::write_idx_labels(dir + "/train-labels-idx1-ubyte", labels);
    testsupport::write_idx_images(dir + "/t10k-images-idx3-ubyte", px, n, 28, 28);
    testsupport::write_idx_labels(dir + "/t10k-labels-idx1-ubyte", labels);

    const std::string csv = temp_dir() + "/abort.csv";
    const std::string path = temp_dir() + "/abort.conf";
    {
        std::ofstream out(path);
        out << R"([model]
preset = lstm3x10

[optimizer]
kind = block-hf
partition = lstm-3block
alpha = 1e308
damping = 0.01
max_cg_iters = 3

[data]
source = mnist
dir = )" << dir << R"(

[run]
seed = 2
max_loops = 8
gradient_batch = 4
curvature_batch = 2
eval_every = 1
csv = )" << csv << "\n";
    }
    const RunResult res = run("train " + path);
    CHECK(res.exit_code == 2);
    CHECK(std::filesystem::exists(csv));
    const std::string text = slurp_file(csv);
    CHECK(text.find("update,epoch,wall_seconds") == 0);  // header flushed
}

TEST_CASE("verify subcommand passes and reports per-check lines") {
    const RunResult res = run("verify cg");
    CHECK(res.exit_code == 0);
    CHECK(res.output.find("cg.known_2x2") != std::string::npos);
    CHECK(res.output.find("PASS") != std::string::npos);
}

TEST_CASE("verify all with an injected tangent fault exits nonzero") {
    const RunResult res = run("verify all --inject-tangent-fault 0.5");
    CHECK(res.exit_code == 3);
    CHECK(res.output.find("FAIL") != std::string::npos);
    CHECK(res.output.find("jvp_grad_adjoint") != std::string::npos);
}

TEST_CASE("unknown verify suite exits with the validation code") {
    const RunResult res = run("verify nosuite");
    CHECK(res.exit_code == 1);
    CHECK(res.output.find("autodiff") != std::string::npos);
}
