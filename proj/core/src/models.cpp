#include "blockhf/models.hpp"

#include <cmath>

namespace blockhf {

ModelSpec autoencoder_spec(std::vector<std::size_t> encoder_sizes) {
    if (encoder_sizes.size() < 2) {
        throw ShapeError("autoencoder needs at least input and code sizes");
    }
    for (std::size_t s : encoder_sizes) {
        if (s == 0) throw ShapeError("autoencoder layer sizes must be positive");
    }
    ModelSpec spec;
    spec.kind = ModelSpec::Kind::Autoencoder;
    spec.encoder_sizes = std::move(encoder_sizes);
    return spec;
}

ModelSpec lstm_spec(std::size_t layers, std::size_t hidden, std::size_t input_features,
                    std::size_t classes, std::size_t seq_len) {
    if (layers < 1 || hidden < 1) {
        throw ShapeError("lstm needs layer count >= 1 and hidden size >= 1");
    }
    if (input_features < 1 || classes < 2) {
        throw ShapeError("lstm needs input features >= 1 and classes >= 2");
    }
    if (seq_len < 1) throw ShapeError("lstm needs a nonzero sequence length");
    ModelSpec spec;
    spec.kind = ModelSpec::Kind::StackedLstm;
    spec.lstm_layers = layers;
    spec.hidden = hidden;
    spec.input_features = input_features;
    spec.classes = classes;
    spec.seq_len = seq_len;
    return spec;
}

ModelSpec model_preset(const std::string& name, std::size_t seq_features,
                       std::size_t seq_len) {
    if (name == "autoencoder-mnist") {
        return autoencoder_spec({784, 1000, 500, 250, 30});
    }
    if (name == "lstm3x10") {
        return lstm_spec(3, 10, seq_features, 10, seq_len);
    }
    throw ConfigError("unknown model preset '" + name +
                      "' (available: autoencoder-mnist, lstm3x10)");
}

std::vector<std::string> model_preset_names() {
    return {"autoencoder-mnist", "lstm3x10"};
}

Graph build_autoencoder(const ModelSpec& spec) {
    if (spec.kind != ModelSpec::Kind::Autoencoder) {
        throw ShapeError("build_autoencoder: spec kind mismatch");
    }
    const auto& enc = spec.encoder_sizes;

    GraphBuilder b;
    const int x = b.input("x", static_cast<int>(enc.front()));
    const int target = b.input("target", static_cast<int>(enc.front()));

    // Full layer chain: encoder sizes then the mirrored decoder.
    std::vector<std::size_t> sizes = enc;
    for (std::size_t i = enc.size() - 1; i-- > 0;) sizes.push_back(enc[i]);

    int h = x;
    const std::size_t n_layers = sizes.size() - 1;
    const std::size_t n_enc = enc.size() - 1;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const bool encoder_half = l < n_enc;
        const std::string prefix =
            (encoder_half ? "enc" + std::to_string(l + 1) : "dec" + std::to_string(l + 1 - n_enc));
        const int w = b.param(prefix + ".W", static_cast<int>(sizes[l]),
                              static_cast<int>(sizes[l + 1]), InitKind::GlorotUniform);
        const int bias = b.param(prefix + ".b", 1, static_cast<int>(sizes[l + 1]),
                                 InitKind::Zero);
        const int lin = b.add(b.matmul(h, w), bias);
        // tanh on hidden layers, sigmoid on the reconstruction so outputs
        // stay inside the data range [0, 1].
        h = (l + 1 == n_layers) ? b.sigmoid(lin) : b.tanh(lin);
    }

    b.set_output(h);
    b.set_loss(b.mse_loss(h, target));
    return b.finish();
}

Graph build_stacked_lstm(const ModelSpec& spec) {
    if (spec.kind != ModelSpec::Kind::StackedLstm) {
        throw ShapeError("build_stacked_lstm: spec kind mismatch");
    }
    const int H = static_cast<int>(spec.hidden);
    const int F = static_cast<int>(spec.input_features);
    const int T = static_cast<int>(spec.seq_len);
    const int L = static_cast<int>(spec.lstm_layers);
    const int classes = static_cast<int>(spec.classes);

    GraphBuilder b;
    const int x = b.input("x", F * T);
    const int target = b.input("target", classes);

    // Parameter registration defines the flattening order: layer by layer,
    // head last, so each layer occupies one contiguous range of w.
    struct LayerParams {
        int wxi, whi, pci, bi;
        int wxf, whf, pcf, bf;
        int wxc, whc, bc;
        int wxo, who, pco, bo;
    };
    std::vector<LayerParams> lp(static_cast<std::size_t>(L));
    for (int l = 0; l < L; ++l) {
        const int fin = (l == 0) ? F : H;
        const std::string p = "l" + std::to_string(l + 1) + ".";
        auto& P = lp[static_cast<std::size_t>(l)];
        P.wxi = b.param(p + "Wxi", fin, H);
        P.whi = b.param(p + "Whi", H, H);
        P.pci = b.param(p + "pci", 1, H, InitKind::Zero);
        P.bi = b.param(p + "bi", 1, H, InitKind::Zero);
        P.wxf = b.param(p + "Wxf", fin, H);
        P.whf = b.param(p + "Whf", H, H);
        P.pcf = b.param(p + "pcf", 1, H, InitKind::Zero);
        P.bf = b.param(p + "bf", 1, H, InitKind::Const, 1.0);
        P.wxc = b.param(p + "Wxc", fin, H);
        P.whc = b.param(p + "Whc", H, H);
        P.bc = b.param(p + "bc", 1, H, InitKind::Zero);
        P.wxo = b.param(p + "Wxo", fin, H);
        P.who = b.param(p + "Who", H, H);
        P.pco = b.param(p + "pco", 1, H, InitKind::Zero);
        P.bo = b.param(p + "bo", 1, H, InitKind::Zero);
    }
    const int head_w = b.param("head.W", H, classes);
    const int head_b = b.param("head.b", 1, classes, InitKind::Zero);

    std::vector<int> h(static_cast<std::size_t>(L));
    std::vector<int> c(static_cast<std::size_t>(L));
    for (int l = 0; l < L; ++l) {
        h[static_cast<std::size_t>(l)] = b.zeros(H);
        c[static_cast<std::size_t>(l)] = b.zeros(H);
    }

    for (int t = 0; t < T; ++t) {
        int below = b.slice_cols(x, static_cast<std::size_t>(t) * F,
                                 static_cast<std::size_t>(t + 1) * F);
        for (int l = 0; l < L; ++l) {
            const auto& P = lp[static_cast<std::size_t>(l)];
            const int hp = h[static_cast<std::size_t>(l)];
            const int cp = c[static_cast<std::size_t>(l)];

            // Peephole gates (Gers 2002): input and forget gates see the
            // previous cell state, the output gate sees the updated one.
            const int i_gate = b.sigmoid(b.add(
                b.add(b.matmul(below, P.wxi), b.matmul(hp, P.whi)),
                b.add(b.mul(cp, P.pci), P.bi)));
            const int f_gate = b.sigmoid(b.add(
                b.add(b.matmul(below, P.wxf), b.matmul(hp, P.whf)),
                b.add(b.mul(cp, P.pcf), P.bf)));
            const int c_cand = b.tanh(b.add(
                b.add(b.matmul(below, P.wxc), b.matmul(hp, P.whc)), P.bc));
            const int c_new = b.add(b.mul(f_gate, cp), b.mul(i_gate, c_cand));
            const int o_gate = b.sigmoid(b.add(
                b.add(b.matmul(below, P.wxo), b.matmul(hp, P.who)),
                b.add(b.mul(c_new, P.pco), P.bo)));
            const int h_new = b.mul(o_gate, b.tanh(c_new));

            h[static_cast<std::size_t>(l)] = h_new;
            c[static_cast<std::size_t>(l)] = c_new;
            below = h_new;
        }
    }

    const int logits = b.add(b.matmul(h[static_cast<std::size_t>(L - 1)], head_w), head_b);
    b.set_output(logits);
    b.set_loss(b.softmax_ce_loss(logits, target));
    return b.finish();
}

Graph build_model(const ModelSpec& spec) {
    return spec.kind == ModelSpec::Kind::Autoencoder ? build_autoencoder(spec)
                                                     : build_stacked_lstm(spec);
}

ParamVector init_params(const Graph& g, Rng& rng) {
    ParamVector w(g.param_count(), 0.0);
    for (const ParamEntry& e : g.layout()) {
        const std::size_t n = e.rows * e.cols;
        switch (e.init) {
            case InitKind::GlorotUniform: {
                const double a = std::sqrt(6.0 / static_cast<double>(e.rows + e.cols));
                for (std::size_t i = 0; i < n; ++i) w[e.offset + i] = rng.uniform(-a, a);
                break;
            }
            case InitKind::Zero:
                break;
            case InitKind::Const:
                for (std::size_t i = 0; i < n; ++i) w[e.offset + i] = e.init_value;
                break;
        }
    }
    return w;
}

ParamVector flatten(const Graph& g, const std::vector<Tensor>& leaf_values) {
    const auto& layout = g.layout();
    if (leaf_values.size() != layout.size()) {
        throw ShapeError("flatten: expected " + std::to_string(layout.size()) +
                         " leaf tensors, got " + std::to_string(leaf_values.size()));
    }
    ParamVector w(g.param_count(), 0.0);
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const ParamEntry& e = layout[i];
        const Tensor& t = leaf_values[i];
        if (t.size() != e.rows * e.cols) {
            throw ShapeError("flatten: leaf '" + e.name + "' expects " +
                             std::to_string(e.rows * e.cols) + " values, got " +
                             shape_str(t.shape));
        }
        std::copy(t.data.begin(), t.data.end(),
                  w.begin() + static_cast<std::ptrdiff_t>(e.offset));
    }
    return w;
}

std::vector<Tensor> unflatten(const Graph& g, const ParamVector& w) {
    if (w.size() != g.param_count()) {
        throw ShapeError("unflatten: vector length " + std::to_string(w.size()) +
                         " does not match parameter count " +
                         std::to_string(g.param_count()));
    }
    std::vector<Tensor> out;
    out.reserve(g.layout().size());
    for (const ParamEntry& e : g.layout()) {
        Tensor t = Tensor::matrix(e.rows, e.cols);
        std::copy(w.begin() + static_cast<std::ptrdiff_t>(e.offset),
                  w.begin() + static_cast<std::ptrdiff_t>(e.offset + e.rows * e.cols),
                  t.data.begin());
        out.push_back(std::move(t));
    }
    return out;
}

double batch_loss(const Graph& g, const Binding& batch, const ParamVector& w,
                  EvalContext& ctx) {
    return loss_value(g, batch, w, ctx);
}

}  // namespace blockhf
