#include "streamline/toy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>

#include "streamline/error.hpp"
#include "streamline/graph.hpp"
#include "streamline/rng.hpp"
#include "streamline/trainer.hpp"

namespace streamline {

namespace {

template <std::size_t N>
const char* pick(Rng& rng, const std::array<const char*, N>& words) {
    return words[rng.below(N)];
}

std::string num(Rng& rng, std::uint64_t lo, std::uint64_t hi) { return std::to_string(lo + rng.below(hi - lo + 1)); }

constexpr std::array<const char*, 8> kNouns{"river", "garden", "engine", "market", "window", "letter", "bridge", "forest"};
constexpr std::array<const char*, 6> kAdjs{"quiet", "old", "bright", "small", "long", "cold"};
constexpr std::array<const char*, 6> kVerbs{"waits", "turns", "opens", "falls", "grows", "moves"};
constexpr std::array<const char*, 6> kNames{"Alice", "Marek", "Ines", "Tomas", "Yuki", "Omar"};
constexpr std::array<const char*, 6> kPlaces{"Lisbon", "Oslo", "Quito", "Hanoi", "Accra", "Perth"};
constexpr std::array<const char*, 6> kFns{"parse", "load", "merge", "split", "flush", "scan"};
constexpr std::array<const char*, 4> kOps{"+", "-", "*", "%"};
constexpr std::array<const char*, 5> kVars{"n", "k", "t", "x", "m"};

std::string sentence(const std::string& domain, Rng& rng) {
    if (domain == "CC") {
        return std::string("the ") + pick(rng, kAdjs) + " " + pick(rng, kNouns) + " " + pick(rng, kVerbs) +
               " near the " + pick(rng, kNouns) + ". ";
    }
    if (domain == "GitHub") {
        return std::string("def ") + pick(rng, kFns) + "(x):\n    return x " + pick(rng, kOps) + " " + num(rng, 1, 99) +
               "\n";
    }
    if (domain == "Book") {
        return std::string(pick(rng, kNames)) + " walked to the " + pick(rng, kNouns) + " and " + pick(rng, kVerbs) +
               " slowly. ";
    }
    if (domain == "StackExchange") {
        return std::string("Q: how do I ") + pick(rng, kFns) + " a " + pick(rng, kNouns) + "? A: call " +
               pick(rng, kFns) + "() twice. ";
    }
    if (domain == "Wiki") {
        return std::string(pick(rng, kNames)) + " is a " + pick(rng, kNouns) + " in " + pick(rng, kPlaces) +
               ", founded in " + num(rng, 1700, 1999) + ". ";
    }
    if (domain == "ArXiv") {
        const char* v = pick(rng, kVars);
        return std::string("We show $f(") + v + ") = " + v + "^" + num(rng, 2, 9) + "$ holds for " + v + " > " +
               num(rng, 1, 9) + ". ";
    }
    return std::string("Buy the best ") + pick(rng, kNouns) + " online. Free shipping over $" + num(rng, 10, 99) + ". ";
}

std::string document(const std::string& domain, Rng& rng) {
    const std::size_t target = 40 + rng.below(81);  // 40..120
    std::string text;
    while (text.size() < target) text += sentence(domain, rng);
    if (text.size() > 120) text.resize(120);
    return text;
}

} // namespace

Corpus synthetic_corpus(std::size_t docs_per_domain, std::uint64_t seed, std::string id) {
    if (docs_per_domain == 0) throw ConfigError("synthetic_corpus: docs_per_domain must be >= 1");
    Corpus corpus;
    corpus.id = std::move(id);
    Rng rng(seed);
    for (std::size_t i = 0; i < docs_per_domain; ++i) {
        for (const auto& [tag, w] : DomainMix::pruning_default().weights) {
            corpus.documents.push_back({tag, document(tag, rng)});
        }
    }
    return corpus;
}

ClassificationTask synthetic_task(const Corpus& corpus, std::string name, std::size_t n_samples, std::size_t k,
                                  std::uint64_t seed) {
    corpus.validate();
    if (k < 2) throw ConfigError("synthetic_task: k must be >= 2");
    if (corpus.documents.size() < k) throw DataError("synthetic_task: corpus smaller than k");
    ClassificationTask task;
    task.name = std::move(name);
    Rng rng(seed);
    auto split_at = [](const std::string& text) { return std::max<std::size_t>(1, text.size() * 2 / 3); };
    for (std::size_t s = 0; s < n_samples; ++s) {
        const std::size_t src = rng.below(corpus.documents.size());
        const std::string& text = corpus.documents[src].text;
        const std::size_t cut = split_at(text);
        McSample sample;
        sample.question = text.substr(0, cut);
        std::vector<std::string> choices{text.substr(cut)};
        while (choices.size() < k) {
            const std::size_t other = rng.below(corpus.documents.size());
            if (other == src) continue;
            const std::string& o = corpus.documents[other].text;
            std::string tail = o.substr(split_at(o));
            if (tail.empty() || std::find(choices.begin(), choices.end(), tail) != choices.end()) continue;
            choices.push_back(std::move(tail));
        }
        if (choices.front().empty()) choices.front() = ".";
        sample.answer = rng.below(k);
        std::swap(choices[0], choices[sample.answer]);
        sample.choices = std::move(choices);
        task.samples.push_back(std::move(sample));
    }
    task.validate();
    return task;
}

std::vector<double> pretrain_lm(TransformerModel& model, const Corpus& corpus, const PretrainConfig& cfg) {
    corpus.validate();
    if (cfg.batch < 1) throw ConfigError("pretrain: batch must be >= 1");
    std::vector<std::vector<int>> seqs;
    for (const Document& d : corpus.documents) {
        std::vector<int> ids = tokenize(d.text, model.config.max_seq_len);
        if (ids.size() >= 2) seqs.push_back(std::move(ids));
    }
    if (seqs.empty()) throw DataError("pretrain: no document has 2 or more tokens");

    Rng rng(cfg.seed);
    AdamW opt(cfg.lr, cfg.weight_decay);
    const auto refs = named_tensors(model);
    std::vector<double> curve;
    curve.reserve(cfg.steps);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        Graph g;
        const ParamBinding params = bind_model(g, model, true);
        std::optional<Node> total;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            const std::vector<int>& ids = seqs[rng.below(seqs.size())];
            Node logits = model_forward(g, model, params, ids);
            const std::vector<int> targets(ids.begin() + 1, ids.end());
            // Rows 0..L-2 predict tokens 1..L-1.
            Node head = g.transpose(g.slice_cols(g.transpose(logits), 0, ids.size() - 1));
            Node loss = g.softmax_ce(head, targets);
            total = total ? g.add(*total, loss) : loss;
        }
        Node loss = g.scale(*total, 1.0f / static_cast<float>(cfg.batch));
        const double value = g.value(loss)[0];
        if (!std::isfinite(value)) throw NumericError("pretrain: non-finite loss at step " + std::to_string(step));
        curve.push_back(value);
        g.backward(loss);
        ParamMap grads;
        for (const auto& [name, node] : params) grads.emplace(name, g.grad(node));
        opt.step(refs, grads);
    }
    return curve;
}

TransformerModel toy_model(const ToyModelOptions& options, const Corpus& corpus) {
    TransformerModel model = init_model(options.config, options.seed);
    if (options.do_pretrain) pretrain_lm(model, corpus, options.pretrain);
    for (std::size_t l : options.zero_effect) {
        if (l >= model.n_layers()) throw ConfigError("zero-effect layer " + std::to_string(l) + " out of range");
        make_zero_effect(model, l);
    }
    return model;
}

} // namespace streamline
