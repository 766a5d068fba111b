#include "streamline/profiler.hpp"

#include <algorithm>
#include <cmath>

#include "streamline/datakit.hpp"
#include "streamline/digest.hpp"
#include "streamline/error.hpp"
#include "streamline/parallel.hpp"
#include "streamline/pruner.hpp"

namespace streamline {

namespace {

using Entry = std::pair<std::size_t, std::size_t>;

std::vector<Entry> enumerate_entries(std::size_t n_layers, const std::set<std::size_t>& widths) {
    std::set<std::size_t> all = widths;
    all.insert(1);
    std::vector<Entry> entries;
    for (std::size_t w : all) {
        if (w < 1 || w > n_layers) {
            throw ContractError("cosine_profile: width " + std::to_string(w) + " outside [1, " +
                                std::to_string(n_layers) + "]");
        }
        for (std::size_t s = 0; s + w <= n_layers; ++s) entries.emplace_back(s, w);
    }
    return entries;
}

struct SampleScores {
    std::vector<std::optional<double>> cos;  // per entry
    std::size_t skipped = 0;
};

SampleScores score_sample(const ActivationTrace& trace, const std::vector<Entry>& entries,
                          const std::vector<bool>* exclude) {
    SampleScores out;
    out.cos.reserve(entries.size());
    for (const auto& [s, w] : entries) {
        const auto& a = trace.taps.at(s);
        const auto& b = trace.taps.at(s + w);
        if (!a || !b) throw ContractError("cosine_profile: trace is missing a tap");
        out.cos.push_back(sample_cosine(*a, *b, out.skipped, exclude));
    }
    return out;
}

ImportanceProfile reduce(const std::vector<SampleScores>& scores, const std::vector<Entry>& entries,
                         std::size_t n_layers, const std::string& corpus_id) {
    ImportanceProfile p;
    p.corpus_id = corpus_id;
    p.n_samples = scores.size();
    p.n_layers = n_layers;
    for (std::size_t e = 0; e < entries.size(); ++e) {
        double sum = 0.0;
        std::size_t used = 0;
        for (const SampleScores& s : scores) {
            if (s.cos[e]) {
                sum += *s.cos[e];
                ++used;
            }
        }
        if (used == 0) {
            throw DataError("cosine_profile: every token was skipped for block (start=" +
                            std::to_string(entries[e].first) + ", width=" + std::to_string(entries[e].second) +
                            "); input is degenerate");
        }
        p.block_cos[entries[e]] = std::clamp(sum / static_cast<double>(used), -1.0, 1.0);
    }
    for (const SampleScores& s : scores) p.skipped_tokens += s.skipped;
    p.per_layer_cos.resize(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) p.per_layer_cos[l] = p.block_cos.at({l, 1});
    return p;
}

std::vector<bool> pad_mask(const std::vector<int>& ids) {
    std::vector<bool> mask(ids.size());
    for (std::size_t t = 0; t < ids.size(); ++t) mask[t] = ids[t] == kPadId;
    return mask;
}

} // namespace

std::optional<double> sample_cosine(const Tensor& a, const Tensor& b, std::size_t& skipped,
                                    const std::vector<bool>* exclude) {
    if (a.shape() != b.shape() || a.rank() != 2) {
        throw DimensionError("sample_cosine: taps " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                             " differ");
    }
    const std::size_t L = a.rows(), d = a.cols();
    if (exclude && exclude->size() != L) throw DimensionError("sample_cosine: exclusion mask length mismatch");
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t t = 0; t < L; ++t) {
        if (exclude && (*exclude)[t]) continue;
        const float* x = a.row(t).data();
        const float* y = b.row(t).data();
        double dot = 0.0, nx = 0.0, ny = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            dot += static_cast<double>(x[i]) * y[i];
            nx += static_cast<double>(x[i]) * x[i];
            ny += static_cast<double>(y[i]) * y[i];
        }
        if (nx == 0.0 || ny == 0.0) {
            ++skipped;
            continue;
        }
        // sqrt(nx * ny) rather than sqrt(nx) * sqrt(ny): equal rows give 1 exactly.
        sum += std::clamp(dot / std::sqrt(nx * ny), -1.0, 1.0);
        ++used;
    }
    if (used == 0) return std::nullopt;
    return sum / static_cast<double>(used);
}

ImportanceProfile cosine_profile(const TransformerModel& model, const std::vector<std::vector<int>>& samples,
                                 const std::set<std::size_t>& widths, const std::string& corpus_id,
                                 std::size_t threads) {
    if (samples.empty()) throw DataError("cosine_profile: no samples");
    const std::vector<Entry> entries = enumerate_entries(model.n_layers(), widths);
    std::vector<SampleScores> scores(samples.size());
    ForwardOptions opts;
    opts.capture_all = true;
    opts.stop_at = model.n_layers();
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        if (samples[i].empty()) throw ContractError("cosine_profile: sample " + std::to_string(i) + " is empty");
        ForwardResult r = forward(model, samples[i], opts);
        const std::vector<bool> mask = pad_mask(samples[i]);
        scores[i] = score_sample(r.trace, entries, &mask);
    });
    return reduce(scores, entries, model.n_layers(), corpus_id);
}

ImportanceProfile cosine_profile_from_traces(const std::vector<ActivationTrace>& traces,
                                             const std::set<std::size_t>& widths, const std::string& corpus_id,
                                             const std::vector<std::vector<bool>>* exclude) {
    if (traces.empty()) throw DataError("cosine_profile: no traces");
    const std::size_t n_layers = traces.front().taps.size() - 1;
    const std::vector<Entry> entries = enumerate_entries(n_layers, widths);
    std::vector<SampleScores> scores;
    scores.reserve(traces.size());
    for (std::size_t i = 0; i < traces.size(); ++i) {
        if (traces[i].taps.size() != n_layers + 1) throw DimensionError("cosine_profile: traces differ in depth");
        scores.push_back(score_sample(traces[i], entries, exclude ? &exclude->at(i) : nullptr));
    }
    return reduce(scores, entries, n_layers, corpus_id);
}

double corpus_ppl(const TransformerModel& model, const std::vector<std::vector<int>>& samples, std::size_t threads) {
    if (samples.empty()) throw DataError("corpus_ppl: empty corpus");
    std::vector<double> ppl(samples.size());
    parallel_for(samples.size(), threads, [&](std::size_t i) { ppl[i] = sentence_ppl(model, samples[i]); });
    double sum = 0.0;
    for (double v : ppl) sum += v;
    return sum / static_cast<double>(ppl.size());
}

PplGreedy ppl_greedy_profile(const TransformerModel& model, const std::vector<std::vector<int>>& samples,
                             std::size_t n_remove, std::size_t threads) {
    if (samples.empty()) throw DataError("ppl_greedy_profile: empty corpus");
    if (n_remove < 1 || n_remove >= model.n_layers()) {
        throw ContractError("ppl_greedy_profile: n_remove must be in [1, " + std::to_string(model.n_layers() - 1) +
                            "], got " + std::to_string(n_remove));
    }
    PplGreedy out;
    out.baseline_ppl = corpus_ppl(model, samples, threads);
    TransformerModel current = model;
    for (std::size_t round = 0; round < n_remove; ++round) {
        std::size_t best = 0;
        double best_ppl = 0.0;
        for (std::size_t j = 0; j < current.n_layers(); ++j) {
            const double ppl = corpus_ppl(remove_block(current, j, 1), samples, threads);
            if (j == 0 || ppl <= best_ppl) {
                best = j;
                best_ppl = ppl;
            }
        }
        out.removal_order.push_back(current.layer_labels[best]);
        out.ppl_after_each.push_back(best_ppl);
        current = remove_block(current, best, 1);
    }
    return out;
}

nlohmann::json compare_metrics(const ImportanceProfile& a, const ImportanceProfile& b, std::size_t n) {
    if (a.n_layers != b.n_layers) {
        throw ContractError("compare_metrics: profiles cover " + std::to_string(a.n_layers) + " and " +
                            std::to_string(b.n_layers) + " layers");
    }
    nlohmann::json out;
    out["n"] = n;
    out["n_layers"] = a.n_layers;
    out["corpora"] = {a.corpus_id, b.corpus_id};
    const PruneSpec sa = select_block(a, n), sb = select_block(b, n);
    out["cosine"] = {{"start", {sa.start, sb.start}}, {"agree", sa.start == sb.start}};
    if (a.ppl_greedy && b.ppl_greedy && a.ppl_greedy->removal_order.size() >= n &&
        b.ppl_greedy->removal_order.size() >= n) {
        std::vector<int> ra(a.ppl_greedy->removal_order.begin(), a.ppl_greedy->removal_order.begin() + n);
        std::vector<int> rb(b.ppl_greedy->removal_order.begin(), b.ppl_greedy->removal_order.begin() + n);
        out["ppl_greedy"] = {{"removal", {ra, rb}}};
        std::sort(ra.begin(), ra.end());
        std::sort(rb.begin(), rb.end());
        out["ppl_greedy"]["agree"] = ra == rb;
    } else {
        out["ppl_greedy"] = nullptr;
    }
    return out;
}

nlohmann::json profile_to_json(const ImportanceProfile& p) {
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& [key, cos] : p.block_cos) blocks.push_back({{"start", key.first}, {"width", key.second}, {"cos", cos}});
    nlohmann::json j{{"corpus_id", p.corpus_id},
                     {"n_samples", p.n_samples},
                     {"n_layers", p.n_layers},
                     {"per_layer_cos", p.per_layer_cos},
                     {"block_cos", blocks},
                     {"skipped_tokens", p.skipped_tokens}};
    if (p.ppl_greedy) {
        j["ppl_greedy"] = {{"removal_order", p.ppl_greedy->removal_order},
                           {"ppl_after_each", p.ppl_greedy->ppl_after_each},
                           {"baseline_ppl", p.ppl_greedy->baseline_ppl}};
    }
    return j;
}

ImportanceProfile profile_from_json(const nlohmann::json& j) {
    try {
        ImportanceProfile p;
        p.corpus_id = j.at("corpus_id").get<std::string>();
        p.n_samples = j.at("n_samples").get<std::size_t>();
        p.n_layers = j.at("n_layers").get<std::size_t>();
        p.per_layer_cos = j.at("per_layer_cos").get<std::vector<double>>();
        for (const auto& b : j.at("block_cos")) {
            p.block_cos[{b.at("start").get<std::size_t>(), b.at("width").get<std::size_t>()}] = b.at("cos").get<double>();
        }
        p.skipped_tokens = j.value("skipped_tokens", std::size_t{0});
        if (j.contains("ppl_greedy") && !j["ppl_greedy"].is_null()) {
            const auto& g = j["ppl_greedy"];
            p.ppl_greedy = PplGreedy{g.at("removal_order").get<std::vector<int>>(),
                                     g.at("ppl_after_each").get<std::vector<double>>(),
                                     g.value("baseline_ppl", 0.0)};
        }
        if (p.per_layer_cos.size() != p.n_layers) throw DataError("profile: per_layer_cos length != n_layers");
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed profile JSON: ") + e.what());
    }
}

std::string profile_id(const ImportanceProfile& profile) {
    Fnv64 h;
    h.text(profile_to_json(profile).dump());
    return profile.corpus_id + "@" + h.hex();
}

} // namespace streamline
