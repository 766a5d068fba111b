#include "streamline/pruner.hpp"

#include <algorithm>

#include "streamline/error.hpp"

namespace streamline {

std::string_view to_string(Metric metric) { return metric == Metric::Cosine ? "cosine" : "ppl_greedy"; }

Metric parse_metric(std::string_view text) {
    if (text == "cosine") return Metric::Cosine;
    if (text == "ppl_greedy") return Metric::PplGreedy;
    throw ConfigError("unknown metric '" + std::string(text) + "' (expected cosine or ppl_greedy)");
}

PruneSpec select_block(const ImportanceProfile& profile, std::size_t n) {
    if (n < 1 || n > profile.n_layers) {
        throw ContractError("select_block: n=" + std::to_string(n) + " outside [1, " +
                            std::to_string(profile.n_layers) + "]");
    }
    PruneSpec spec;
    spec.n = n;
    spec.metric = Metric::Cosine;
    double best = 0.0;
    for (std::size_t s = 0; s + n <= profile.n_layers; ++s) {
        auto it = profile.block_cos.find({s, n});
        if (it == profile.block_cos.end()) {
            throw DataError("select_block: profile has no entry for block (start=" + std::to_string(s) +
                            ", width=" + std::to_string(n) + ")");
        }
        if (s == 0 || it->second >= best) {
            best = it->second;
            spec.start = s;
        }
    }
    spec.profile_ref = profile_id(profile);
    return spec;
}

PruneSpec select_greedy(const ImportanceProfile& profile, std::size_t n) {
    if (!profile.ppl_greedy) throw DataError("select_greedy: profile carries no ppl_greedy section");
    const auto& order = profile.ppl_greedy->removal_order;
    if (n < 1 || n > order.size()) {
        throw DataError("select_greedy: profile lists " + std::to_string(order.size()) + " removals, need " +
                        std::to_string(n));
    }
    PruneSpec spec;
    spec.n = n;
    spec.metric = Metric::PplGreedy;
    spec.removal.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
    spec.start = static_cast<std::size_t>(*std::min_element(spec.removal.begin(), spec.removal.end()));
    spec.profile_ref = profile_id(profile);
    return spec;
}

TransformerModel remove_block(const TransformerModel& model, std::size_t start, std::size_t n,
                              const std::optional<ReplacementNet>& replacement) {
    const std::size_t L = model.n_layers();
    if (n < 1 || start + n > L) {
        throw ContractError("prune: block (start=" + std::to_string(start) + ", n=" + std::to_string(n) +
                            ") out of range for " + std::to_string(L) + " layers");
    }
    if (n == L) throw ContractError("prune: cannot remove every layer of the model");
    if (replacement) replacement->validate(model.config);

    TransformerModel out;
    out.config = model.config;
    out.config.n_layers = L - n;
    out.embedding = model.embedding;
    out.final_norm = model.final_norm;
    out.unembed = model.unembed;
    for (std::size_t i = 0; i < L; ++i) {
        if (i >= start && i < start + n) continue;
        out.layers.push_back(model.layers[i]);
        out.layer_labels.push_back(model.layer_labels[i]);
    }
    auto place = [&](std::size_t pos, const ReplacementNet& net) {
        if (!out.replacement_slots.emplace(pos, net).second) {
            throw ContractError("prune: two replacement networks would share boundary " + std::to_string(pos));
        }
    };
    if (replacement && replacement->kind != ReplacementKind::None) place(start, *replacement);
    for (const auto& [pos, net] : model.replacement_slots) {
        if (pos < start) {
            place(pos, net);
        } else if (pos >= start + n) {
            place(pos - n, net);
        } else if (pos == start && !(replacement && replacement->kind != ReplacementKind::None)) {
            // The stream entering the removed block still passes through this net.
            place(pos, net);
        } else if (pos == start) {
            throw ContractError("prune: boundary " + std::to_string(pos) + " already holds a replacement network");
        }
        // Slots strictly inside the removed span vanish with it.
    }
    out.validate();
    return out;
}

TransformerModel prune(const TransformerModel& model, const PruneSpec& spec,
                       const std::optional<ReplacementNet>& replacement) {
    if (spec.metric == Metric::Cosine) return remove_block(model, spec.start, spec.n, replacement);

    if (spec.removal.empty()) throw ContractError("prune: greedy spec lists no layers");
    std::vector<std::size_t> idx;
    for (int label : spec.removal) {
        auto it = std::find(model.layer_labels.begin(), model.layer_labels.end(), label);
        if (it == model.layer_labels.end()) {
            throw ContractError("prune: layer label " + std::to_string(label) + " is not present in the model");
        }
        idx.push_back(static_cast<std::size_t>(it - model.layer_labels.begin()));
    }
    std::sort(idx.begin(), idx.end());
    if (std::adjacent_find(idx.begin(), idx.end()) != idx.end()) throw ContractError("prune: duplicate layer label");
    const bool contiguous = idx.back() - idx.front() + 1 == idx.size();
    if (replacement && replacement->kind != ReplacementKind::None) {
        if (!contiguous) throw ContractError("prune: a replacement needs the removed layers to be contiguous");
        return remove_block(model, idx.front(), idx.size(), replacement);
    }
    TransformerModel current = model;
    for (auto it = idx.rbegin(); it != idx.rend(); ++it) current = remove_block(current, *it, 1);
    return current;
}

std::vector<TransformerLayerWeights> pruned_layers(const TransformerModel& model, const PruneSpec& spec) {
    std::vector<TransformerLayerWeights> out;
    if (spec.metric == Metric::Cosine) {
        if (spec.start + spec.n > model.n_layers()) throw ContractError("pruned_layers: spec out of range");
        for (std::size_t i = spec.start; i < spec.start + spec.n; ++i) out.push_back(model.layers[i]);
        return out;
    }
    for (std::size_t i = 0; i < model.n_layers(); ++i) {
        if (std::find(spec.removal.begin(), spec.removal.end(), model.layer_labels[i]) != spec.removal.end()) {
            out.push_back(model.layers[i]);
        }
    }
    return out;
}

double sparsity(const TransformerModel& before, const TransformerModel& after) {
    const double b = static_cast<double>(before.parameter_count());
    return 1.0 - static_cast<double>(after.parameter_count()) / b;
}

nlohmann::json spec_to_json(const PruneSpec& spec) {
    nlohmann::json j{{"n", spec.n},
                     {"start", spec.start},
                     {"metric", std::string(to_string(spec.metric))},
                     {"profile_ref", spec.profile_ref}};
    if (spec.metric == Metric::PplGreedy) j["removal"] = spec.removal;
    return j;
}

PruneSpec spec_from_json(const nlohmann::json& j) {
    try {
        PruneSpec s;
        s.n = j.at("n").get<std::size_t>();
        s.start = j.at("start").get<std::size_t>();
        s.metric = parse_metric(j.at("metric").get<std::string>());
        s.profile_ref = j.value("profile_ref", std::string());
        if (j.contains("removal")) s.removal = j["removal"].get<std::vector<int>>();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed prune spec: ") + e.what());
    }
}

} // namespace streamline
