#pragma once

// Shared helpers for the test binaries.

#include <filesystem>
#include <string>
#include <vector>

#include "oracle.hpp"
#include "streamline/model.hpp"
#include "streamline/rng.hpp"
#include "streamline/toy.hpp"

namespace fixtures {

using namespace streamline;

inline ModelConfig small_config(std::size_t n_layers = 4, std::size_t vocab = 32) {
    ModelConfig c;
    c.vocab_size = vocab;
    c.d_model = 16;
    c.n_layers = n_layers;
    c.n_heads = 2;
    c.d_ff = 32;
    c.max_seq_len = 24;
    return c;
}

// Random model whose weights are large enough that every layer visibly moves
// the residual stream (init_model's 0.02 scale leaves layers near-identity).
inline TransformerModel lively_model(const ModelConfig& c, std::uint64_t seed, float scale = 0.3f) {
    TransformerModel m = init_model(c, seed);
    Rng rng(seed ^ 0xabcdefULL);
    for (auto& [name, t] : named_tensors(m)) {
        if (t->rank() == 1) continue;  // norm gains stay at 1
        *t = Tensor::randn(t->shape(), scale, rng);
    }
    return m;
}

inline std::vector<int> random_ids(std::size_t len, std::size_t vocab, Rng& rng) {
    std::vector<int> ids(len);
    for (int& id : ids) id = static_cast<int>(rng.below(vocab));
    return ids;
}

inline oracle::Vec to_vec(const Tensor& t) { return oracle::Vec(t.data().begin(), t.data().end()); }

inline oracle::Layer to_oracle(const TransformerLayerWeights& w) {
    return {oracle::to_mat(w.wq),     oracle::to_mat(w.wk),   oracle::to_mat(w.wv),     oracle::to_mat(w.wo),
            oracle::to_mat(w.w_gate), oracle::to_mat(w.w_up), oracle::to_mat(w.w_down), to_vec(w.attn_norm),
            to_vec(w.mlp_norm)};
}

// Small byte-level model trained briefly on the synthetic corpus, so that
// removing any of its layers costs perplexity.
inline TransformerModel trained_small_model(std::size_t n_layers, std::uint64_t seed, std::size_t steps = 120) {
    ModelConfig c = small_config(n_layers, 259);
    c.max_seq_len = 128;
    TransformerModel m = init_model(c, seed);
    PretrainConfig pc;
    pc.steps = steps;
    pc.lr = 1e-2;
    pc.seed = seed;
    pretrain_lm(m, synthetic_corpus(20, seed + 100), pc);
    return m;
}

// Inserts an exact-identity layer before position `pos`.
inline TransformerModel insert_identity_layer(const TransformerModel& m, std::size_t pos, std::uint64_t seed) {
    TransformerModel out = m;
    Rng rng(seed);
    TransformerLayerWeights layer = init_layer(m.config, rng);
    layer.wo = Tensor(layer.wo.shape());
    layer.w_down = Tensor(layer.w_down.shape());
    out.layers.insert(out.layers.begin() + static_cast<std::ptrdiff_t>(pos), layer);
    out.config.n_layers += 1;
    out.layer_labels.clear();
    for (std::size_t i = 0; i < out.layers.size(); ++i) out.layer_labels.push_back(static_cast<int>(i));
    out.validate();
    return out;
}

inline std::vector<std::vector<int>> corpus_samples(const Corpus& corpus, std::size_t n, std::size_t max_len) {
    std::vector<std::vector<int>> out;
    for (std::size_t i = 0; i < n && i < corpus.documents.size(); ++i) out.push_back(tokenize(corpus.documents[i].text, max_len));
    return out;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("streamline_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace fixtures
