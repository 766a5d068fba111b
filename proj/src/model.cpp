#include "streamline/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "streamline/digest.hpp"
#include "streamline/error.hpp"
#include "streamline/rng.hpp"

namespace streamline {

namespace {

constexpr float kInitStd = 0.02f;

const char* const kLayerNames[] = {"attn.wq",    "attn.wk",    "attn.wv",   "attn.wo",  "mlp.w_gate",
                                   "mlp.w_up",   "mlp.w_down", "attn_norm", "mlp_norm"};

template <typename Layer, typename Fn>
void for_each_layer_tensor(Layer& layer, Fn&& fn) {
    fn("attn.wq", layer.wq);
    fn("attn.wk", layer.wk);
    fn("attn.wv", layer.wv);
    fn("attn.wo", layer.wo);
    fn("mlp.w_gate", layer.w_gate);
    fn("mlp.w_up", layer.w_up);
    fn("mlp.w_down", layer.w_down);
    fn("attn_norm", layer.attn_norm);
    fn("mlp_norm", layer.mlp_norm);
}

template <typename Model, typename Out>
void collect_named(Model& model, Out& out) {
    out.emplace_back("embedding", &model.embedding);
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const std::string prefix = "layers." + std::to_string(i) + ".";
        for_each_layer_tensor(model.layers[i], [&](const char* name, auto& t) { out.emplace_back(prefix + name, &t); });
    }
    out.emplace_back("final_norm", &model.final_norm);
    out.emplace_back("unembed", &model.unembed);
    for (auto& [pos, net] : model.replacement_slots) {
        const std::string prefix = "replacements." + std::to_string(pos) + ".";
        for (auto& [name, t] : net.params) out.emplace_back(prefix + name, &t);
    }
}

ParamBinding strip_prefix(const ParamBinding& params, const std::string& prefix) {
    ParamBinding out;
    for (auto it = params.lower_bound(prefix); it != params.end() && it->first.starts_with(prefix); ++it) {
        out.emplace(it->first.substr(prefix.size()), it->second);
    }
    return out;
}

void check_ids(const ModelConfig& config, std::span<const int> ids) {
    if (ids.empty()) throw ContractError("forward: empty token sequence");
    if (ids.size() > config.max_seq_len) {
        throw ContractError("forward: sequence length " + std::to_string(ids.size()) + " exceeds max_seq_len " +
                            std::to_string(config.max_seq_len));
    }
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
            throw ContractError("forward: token id " + std::to_string(id) + " out of range for vocab " +
                                std::to_string(config.vocab_size));
        }
    }
}

// Runs the residual stream up to `stop_at` (inclusive) or to the logits.
std::optional<Node> run(Graph& g, const TransformerModel& model, const ParamBinding& params, std::span<const int> ids,
                        std::vector<Node>* taps, std::optional<std::size_t> stop_at) {
    check_ids(model.config, ids);
    const std::size_t n = model.layers.size();
    Node x = g.gather(params.at("embedding"), ids);
    for (std::size_t p = 0; p <= n; ++p) {
        if (auto slot = model.replacement_slots.find(p); slot != model.replacement_slots.end()) {
            const ParamBinding sub = strip_prefix(params, "replacements." + std::to_string(p) + ".");
            x = replacement_forward(g, x, slot->second, sub, model.config);
        }
        if (taps) taps->push_back(x);
        if (stop_at && *stop_at == p) return std::nullopt;
        if (p < n) {
            x = layer_forward(g, x, layer_binding(params, "layers." + std::to_string(p) + "."), model.config);
        }
    }
    Node normed = g.rmsnorm(x, params.at("final_norm"), model.config.norm_eps);
    return g.matmul(normed, params.at("unembed"));
}


} // namespace

void ModelConfig::validate() const {
    if (vocab_size < 1 || d_model < 1 || n_heads < 1 || d_ff < 1) throw ConfigError("model dimensions must be >= 1");
    if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
    if (max_seq_len < 1) throw ConfigError("max_seq_len must be >= 1");
    if (d_model % n_heads != 0) {
        throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                          std::to_string(n_heads));
    }
    if (head_dim() % 2 != 0) throw ConfigError("head_dim must be even for rotary embeddings");
    if (!(norm_eps >= 0.0f)) throw ConfigError("norm_eps must be >= 0");
}

ParamMap layer_params(const TransformerLayerWeights& layer) {
    ParamMap out;
    for_each_layer_tensor(layer, [&](const char* name, const Tensor& t) { out.emplace(name, t); });
    return out;
}

TransformerLayerWeights layer_from_params(const ParamMap& params) {
    TransformerLayerWeights layer;
    for_each_layer_tensor(layer, [&](const char* name, Tensor& t) {
        auto it = params.find(name);
        if (it == params.end()) throw DataError(std::string("layer parameter missing: ") + name);
        t = it->second;
    });
    return layer;
}

std::size_t layer_parameter_count(const ModelConfig& c) {
    return 4 * c.d_model * c.d_model + 3 * c.d_model * c.d_ff + 2 * c.d_model;
}

std::size_t TransformerModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named_tensors(*this)) n += t->size();
    return n;
}

void TransformerModel::validate() const {
    config.validate();
    const std::size_t d = config.d_model, V = config.vocab_size, ff = config.d_ff;
    auto expect = [](const Tensor& t, const Shape& s, const std::string& name) {
        if (t.shape() != s) {
            throw DimensionError(name + " has shape " + shape_string(t.shape()) + ", expected " + shape_string(s));
        }
    };
    if (layers.size() != config.n_layers) throw DataError("layer count does not match config.n_layers");
    if (layer_labels.size() != layers.size()) throw DataError("layer_labels length does not match layer count");
    for (std::size_t i = 1; i < layer_labels.size(); ++i) {
        if (layer_labels[i] <= layer_labels[i - 1]) throw DataError("layer_labels must be strictly increasing");
    }
    expect(embedding, {V, d}, "embedding");
    expect(final_norm, {d}, "final_norm");
    expect(unembed, {d, V}, "unembed");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const std::string p = "layers." + std::to_string(i) + ".";
        expect(l.wq, {d, d}, p + "attn.wq");
        expect(l.wk, {d, d}, p + "attn.wk");
        expect(l.wv, {d, d}, p + "attn.wv");
        expect(l.wo, {d, d}, p + "attn.wo");
        expect(l.w_gate, {d, ff}, p + "mlp.w_gate");
        expect(l.w_up, {d, ff}, p + "mlp.w_up");
        expect(l.w_down, {ff, d}, p + "mlp.w_down");
        expect(l.attn_norm, {d}, p + "attn_norm");
        expect(l.mlp_norm, {d}, p + "mlp_norm");
    }
    for (const auto& [pos, net] : replacement_slots) {
        if (pos > layers.size()) throw DataError("replacement slot position " + std::to_string(pos) + " out of range");
        net.validate(config);
    }
}

TransformerLayerWeights init_layer(const ModelConfig& c, Rng& rng) {
    const float out_std = kInitStd / std::sqrt(2.0f * static_cast<float>(c.n_layers));
    TransformerLayerWeights l;
    l.wq = Tensor::randn({c.d_model, c.d_model}, kInitStd, rng);
    l.wk = Tensor::randn({c.d_model, c.d_model}, kInitStd, rng);
    l.wv = Tensor::randn({c.d_model, c.d_model}, kInitStd, rng);
    l.wo = Tensor::randn({c.d_model, c.d_model}, out_std, rng);
    l.w_gate = Tensor::randn({c.d_model, c.d_ff}, kInitStd, rng);
    l.w_up = Tensor::randn({c.d_model, c.d_ff}, kInitStd, rng);
    l.w_down = Tensor::randn({c.d_ff, c.d_model}, out_std, rng);
    l.attn_norm = Tensor({c.d_model}, 1.0f);
    l.mlp_norm = Tensor({c.d_model}, 1.0f);
    return l;
}

TransformerModel init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    TransformerModel m;
    m.config = config;
    m.embedding = Tensor::randn({config.vocab_size, config.d_model}, kInitStd, rng);
    for (std::size_t i = 0; i < config.n_layers; ++i) {
        m.layers.push_back(init_layer(config, rng));
        m.layer_labels.push_back(static_cast<int>(i));
    }
    m.final_norm = Tensor({config.d_model}, 1.0f);
    m.unembed = Tensor::randn({config.d_model, config.vocab_size}, kInitStd, rng);
    return m;
}

void make_zero_effect(TransformerModel& model, std::size_t index) {
    if (index >= model.layers.size()) throw ContractError("make_zero_effect: layer index out of range");
    auto& l = model.layers[index];
    std::fill(l.wo.data().begin(), l.wo.data().end(), 0.0f);
    std::fill(l.w_down.data().begin(), l.w_down.data().end(), 0.0f);
}

std::vector<std::pair<std::string, const Tensor*>> named_tensors(const TransformerModel& model) {
    std::vector<std::pair<std::string, const Tensor*>> out;
    collect_named(model, out);
    return out;
}

std::vector<std::pair<std::string, Tensor*>> named_tensors(TransformerModel& model) {
    std::vector<std::pair<std::string, Tensor*>> out;
    collect_named(model, out);
    return out;
}

LayerBinding layer_binding(const ParamBinding& params, const std::string& prefix) {
    auto get = [&](const char* name) {
        auto it = params.find(prefix + name);
        if (it == params.end()) throw DataError("missing layer parameter " + prefix + name);
        return it->second;
    };
    return LayerBinding{get(kLayerNames[0]), get(kLayerNames[1]), get(kLayerNames[2]),
                        get(kLayerNames[3]), get(kLayerNames[4]), get(kLayerNames[5]),
                        get(kLayerNames[6]), get(kLayerNames[7]), get(kLayerNames[8])};
}

Node layer_forward(Graph& g, Node x, const LayerBinding& w, const ModelConfig& config, SublayerOutputs* sublayers) {
    const std::size_t heads = config.n_heads;
    const std::size_t hd = g.value(w.wq).dim(1) / heads;

    Node h = g.rmsnorm(x, w.attn_norm, config.norm_eps);
    Node q = g.rope(g.matmul(h, w.wq), heads);
    Node k = g.rope(g.matmul(h, w.wk), heads);
    Node v = g.matmul(h, w.wv);
    std::vector<Node> per_head;
    per_head.reserve(heads);
    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(hd));
    for (std::size_t i = 0; i < heads; ++i) {
        Node qh = g.slice_cols(q, i * hd, hd);
        Node kh = g.slice_cols(k, i * hd, hd);
        Node vh = g.slice_cols(v, i * hd, hd);
        Node probs = g.causal_softmax(g.scale(g.matmul(qh, g.transpose(kh)), inv_sqrt));
        per_head.push_back(g.matmul(probs, vh));
    }
    Node attn = g.matmul(heads == 1 ? per_head[0] : g.concat_cols(per_head), w.wo);
    Node x1 = g.add(x, attn);

    Node h2 = g.rmsnorm(x1, w.mlp_norm, config.norm_eps);
    Node gated = g.mul(g.silu(g.matmul(h2, w.w_gate)), g.matmul(h2, w.w_up));
    Node mlp = g.matmul(gated, w.w_down);
    if (sublayers) *sublayers = SublayerOutputs{attn, mlp};
    return g.add(x1, mlp);
}

ParamBinding bind_model(Graph& graph, const TransformerModel& model, bool requires_grad) {
    ParamBinding out;
    for (const auto& [name, t] : named_tensors(model)) out.emplace(name, graph.leaf_ref(*t, requires_grad));
    return out;
}

Node model_forward(Graph& graph, const TransformerModel& model, const ParamBinding& params, std::span<const int> ids,
                   std::vector<Node>* taps) {
    return *run(graph, model, params, ids, taps, std::nullopt);
}

ForwardResult forward(const TransformerModel& model, std::span<const int> ids, const ForwardOptions& options) {
    Graph g;
    const ParamBinding params = bind_model(g, model, false);
    std::vector<Node> taps;
    if (options.stop_at && *options.stop_at > model.layers.size()) {
        throw ContractError("forward: stop_at boundary out of range");
    }
    std::optional<Node> logits = run(g, model, params, ids, &taps, options.stop_at);

    ForwardResult out;
    out.trace.taps.resize(model.layers.size() + 1);
    auto record = [&](std::size_t p) {
        if (p > model.layers.size()) throw ContractError("forward: capture boundary out of range");
        if (p < taps.size()) out.trace.taps[p] = g.value(taps[p]);
    };
    if (options.capture_all) {
        for (std::size_t p = 0; p < taps.size(); ++p) record(p);
    } else {
        for (std::size_t p : options.capture) record(p);
    }
    if (logits) out.logits = g.value(*logits);
    return out;
}

double mean_nll_from_logits(const Tensor& logits, std::span<const int> ids) {
    if (ids.size() < 2) throw ContractError("perplexity needs at least 2 tokens");
    if (logits.rows() < ids.size() - 1) throw DimensionError("logits have fewer rows than predicted positions");
    const std::size_t V = logits.cols();
    double total = 0.0;
    for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
        auto row = logits.row(t);
        double m = row[0];
        for (float v : row) m = std::max(m, static_cast<double>(v));
        double z = 0.0;
        for (float v : row) z += std::exp(v - m);
        const auto target = static_cast<std::size_t>(ids[t + 1]);
        if (target >= V) throw ContractError("perplexity: target id out of range");
        total += m + std::log(z) - row[target];
    }
    return total / static_cast<double>(ids.size() - 1);
}

double sentence_ppl_from_logits(const Tensor& logits, std::span<const int> ids) {
    return std::exp(mean_nll_from_logits(logits, ids));
}

double sentence_ppl(const TransformerModel& model, std::span<const int> ids) {
    if (ids.size() < 2) throw ContractError("sentence_ppl needs at least 2 tokens, got " + std::to_string(ids.size()));
    return sentence_ppl_from_logits(forward(model, ids).logits, ids);
}

std::vector<int> greedy_decode(const TransformerModel& model, std::span<const int> prompt, std::size_t max_new) {
    if (prompt.empty()) throw ContractError("greedy_decode: empty prompt");
    std::vector<int> seq(prompt.begin(), prompt.end());
    const std::size_t window = model.config.max_seq_len;
    for (std::size_t step = 0; step < max_new; ++step) {
        const std::size_t begin = seq.size() > window ? seq.size() - window : 0;
        std::span<const int> ctx(seq.data() + begin, seq.size() - begin);
        const Tensor logits = forward(model, ctx).logits;
        auto last = logits.row(logits.rows() - 1);
        std::size_t best = 0;
        for (std::size_t v = 1; v < last.size(); ++v) {
            if (last[v] > last[best]) best = v;
        }
        seq.push_back(static_cast<int>(best));
    }
    return seq;
}

std::string model_fingerprint(const TransformerModel& model) {
    Fnv64 h;
    const ModelConfig& c = model.config;
    std::ostringstream cfg;
    cfg << c.vocab_size << ',' << c.d_model << ',' << c.n_layers << ',' << c.n_heads << ',' << c.d_ff << ','
        << c.max_seq_len << ',';
    h.text(cfg.str());
    h.bytes(&c.norm_eps, sizeof(float));
    for (int label : model.layer_labels) h.text(std::to_string(label));
    for (const auto& [pos, net] : model.replacement_slots) {
        h.text("slot " + std::to_string(pos) + ' ' + std::string(to_string(net.kind)) + ' ' +
               std::to_string(net.d_inner) + (net.residual ? " residual" : " direct"));
    }
    for (const auto& [name, t] : named_tensors(model)) {
        h.text(name);
        h.text(shape_string(t->shape()));
        h.bytes(t->data().data(), t->size() * sizeof(float));
    }
    return h.hex();
}

} // namespace streamline
