#pragma once

#include <string>
#include <vector>

#include "blockhf/autodiff.hpp"
#include "blockhf/graph.hpp"
#include "blockhf/rng.hpp"

namespace blockhf {

// Architecture description for the two benchmark networks.
struct ModelSpec {
    enum class Kind { Autoencoder, StackedLstm };
    Kind kind = Kind::Autoencoder;

    // Autoencoder: encoder sizes input..code; the decoder mirrors them.
    std::vector<std::size_t> encoder_sizes;

    // Stacked LSTM.
    std::size_t lstm_layers = 0;
    std::size_t hidden = 0;
    std::size_t input_features = 0;
    std::size_t classes = 0;
    std::size_t seq_len = 0;
};

ModelSpec autoencoder_spec(std::vector<std::size_t> encoder_sizes);
ModelSpec lstm_spec(std::size_t layers, std::size_t hidden, std::size_t input_features,
                    std::size_t classes, std::size_t seq_len);

// Named presets addressable from CLI configs: "autoencoder-mnist"
// (784-1000-500-250-30) and "lstm3x10" (3 layers, 10 hidden units).
// For lstm3x10 the sequence geometry (features per step, step count) comes
// from the caller since it depends on the sequentialization mode.
ModelSpec model_preset(const std::string& name, std::size_t seq_features = 1,
                       std::size_t seq_len = 49);
std::vector<std::string> model_preset_names();

// Tanh autoencoder reconstructing its input ("x" vs "target"), sigmoid on
// the final decoder layer, MSE loss. Input leaves: "x", "target".
Graph build_autoencoder(const ModelSpec& spec);

// Stacked peephole LSTMs unrolled over seq_len steps, fully-connected
// softmax head on the top layer's last hidden state. Input leaves: "x"
// ([batch x seq_len*features]) and "target" (one-hot [batch x classes]).
Graph build_stacked_lstm(const ModelSpec& spec);

Graph build_model(const ModelSpec& spec);

// Deterministic initialization: weight matrices uniform(-a, a) with
// a = sqrt(6 / (fan_in + fan_out)); biases zero; LSTM forget-gate bias 1;
// peephole vectors zero.
ParamVector init_params(const Graph& g, Rng& rng);

// Canonical flattening: per-leaf tensors <-> flat vector, in layout order.
ParamVector flatten(const Graph& g, const std::vector<Tensor>& leaf_values);
std::vector<Tensor> unflatten(const Graph& g, const ParamVector& w);

// Mean per-sample loss over the bound batch.
double batch_loss(const Graph& g, const Binding& batch, const ParamVector& w,
                  EvalContext& ctx);

}  // namespace blockhf
