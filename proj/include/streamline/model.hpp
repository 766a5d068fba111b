#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "streamline/graph.hpp"
#include "streamline/replacement.hpp"
#include "streamline/tensor.hpp"

namespace streamline {

struct ModelConfig {
    std::size_t vocab_size = 259;
    std::size_t d_model = 64;
    std::size_t n_layers = 8;
    std::size_t n_heads = 4;
    std::size_t d_ff = 256;
    std::size_t max_seq_len = 128;
    float norm_eps = 1e-5f;

    std::size_t head_dim() const { return d_model / n_heads; }
    // Throws ConfigError on an inconsistent configuration.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TransformerLayerWeights {
    Tensor wq, wk, wv, wo;          // [d x d]
    Tensor w_gate, w_up;            // [d x d_ff]
    Tensor w_down;                  // [d_ff x d]
    Tensor attn_norm, mlp_norm;     // [d]

    friend bool operator==(const TransformerLayerWeights&, const TransformerLayerWeights&) = default;
};

// Layer tensors keyed by their in-layer names ("attn.wq", ..., "mlp_norm").
ParamMap layer_params(const TransformerLayerWeights& layer);
TransformerLayerWeights layer_from_params(const ParamMap& params);
std::size_t layer_parameter_count(const ModelConfig& config);

// Pre-norm decoder-only transformer: RMSNorm, rotary attention, SwiGLU MLP,
// no biases. `layers.size() == config.n_layers` always holds; layer_labels
// records which layer of the original (unpruned) model each one came from.
//
// replacement_slots maps a residual boundary position p (0..n_layers) to a
// network applied to the stream right before layer p (or before the final
// norm when p == n_layers).
struct TransformerModel {
    ModelConfig config;
    Tensor embedding;     // [V x d]
    std::vector<TransformerLayerWeights> layers;
    Tensor final_norm;    // [d]
    Tensor unembed;       // [d x V]
    std::vector<int> layer_labels;
    std::map<std::size_t, ReplacementNet> replacement_slots;

    std::size_t n_layers() const { return layers.size(); }
    std::size_t parameter_count() const;
    void validate() const;

    friend bool operator==(const TransformerModel&, const TransformerModel&) = default;
};

// Random model: weights ~ N(0, 0.02), output projections scaled by
// 1/sqrt(2 n_layers), norm gains 1.
TransformerModel init_model(const ModelConfig& config, std::uint64_t seed);
TransformerLayerWeights init_layer(const ModelConfig& config, class Rng& rng);

// Zero the attention and MLP output projections of layer `index`, turning it
// into an exact identity on the residual stream.
void make_zero_effect(TransformerModel& model, std::size_t index);

// Every parameter tensor with its container name, in a fixed order:
// embedding, layers.{i}.*, final_norm, unembed, replacements.{p}.*.
std::vector<std::pair<std::string, const Tensor*>> named_tensors(const TransformerModel& model);
std::vector<std::pair<std::string, Tensor*>> named_tensors(TransformerModel& model);

// Taps: tap p is the residual stream entering layer p (after any replacement
// slot at p); tap n_layers is the stream entering the final norm.
struct ActivationTrace {
    int sample_id = 0;
    std::vector<std::optional<Tensor>> taps;  // n_layers + 1 entries
};

struct ForwardOptions {
    std::vector<std::size_t> capture;   // boundaries to record
    bool capture_all = false;
    // Stop once this boundary is reached; logits are then left empty.
    std::optional<std::size_t> stop_at;
};

struct ForwardResult {
    Tensor logits;   // [T x V]
    ActivationTrace trace;
};

ForwardResult forward(const TransformerModel& model, std::span<const int> ids, const ForwardOptions& options = {});

// Graph-level building blocks, shared by inference, training and the
// TransformerLayer replacement.
struct LayerBinding {
    Node wq, wk, wv, wo, w_gate, w_up, w_down, attn_norm, mlp_norm;
};
LayerBinding layer_binding(const ParamBinding& params, const std::string& prefix = "");

struct SublayerOutputs {
    Node attn;  // attention contribution added to the stream
    Node mlp;   // MLP contribution added to the stream
};

Node layer_forward(Graph& graph, Node x, const LayerBinding& w, const ModelConfig& config,
                   SublayerOutputs* sublayers = nullptr);

// Binds every model tensor by container name.
ParamBinding bind_model(Graph& graph, const TransformerModel& model, bool requires_grad);

// Records the full forward on `graph`; taps (if non-null) receive the stream
// node at each boundary. Returns the logits node.
Node model_forward(Graph& graph, const TransformerModel& model, const ParamBinding& params, std::span<const int> ids,
                   std::vector<Node>* taps = nullptr);

// exp(mean over t=1..L-1 of -log p(ids[t] | ids[<t])).
double sentence_ppl(const TransformerModel& model, std::span<const int> ids);
double sentence_ppl_from_logits(const Tensor& logits, std::span<const int> ids);
// Mean token NLL in double, same positions as sentence_ppl.
double mean_nll_from_logits(const Tensor& logits, std::span<const int> ids);

// Appends argmax tokens (ties -> lowest id). The context window slides once
// the sequence exceeds max_seq_len.
std::vector<int> greedy_decode(const TransformerModel& model, std::span<const int> prompt, std::size_t max_new);

// Stable 64-bit digest (hex) over config, labels, replacement descriptors
// and every tensor payload.
std::string model_fingerprint(const TransformerModel& model);

} // namespace streamline
