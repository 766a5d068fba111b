#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "streamline/model.hpp"
#include "streamline/profiler.hpp"

namespace streamline {

enum class Metric { Cosine, PplGreedy };

std::string_view to_string(Metric metric);
Metric parse_metric(std::string_view text);

struct PruneSpec {
    std::size_t n = 1;
    std::size_t start = 0;
    Metric metric = Metric::Cosine;
    std::string profile_ref;
    // PplGreedy only: original layer labels to remove, in removal order.
    std::vector<int> removal;

    friend bool operator==(const PruneSpec&, const PruneSpec&) = default;
};

// argmax over start of block_cos[(start, n)]; ties go to the largest start.
PruneSpec select_block(const ImportanceProfile& profile, std::size_t n);

// First n entries of the greedy removal order.
PruneSpec select_greedy(const ImportanceProfile& profile, std::size_t n);

// Removes layers [start, start+n) and installs `replacement` (if any) at
// boundary `start`. Existing slots before the span keep their position,
// slots strictly inside it are dropped, the slot at start+n moves to start
// and later slots shift down by n. Two networks landing on one boundary is
// a ContractError. The input model is not modified.
TransformerModel remove_block(const TransformerModel& model, std::size_t start, std::size_t n,
                              const std::optional<ReplacementNet>& replacement = std::nullopt);

// Applies a spec. Greedy specs remove their labels one layer at a time and
// accept a replacement only when the labels form a contiguous run.
TransformerModel prune(const TransformerModel& model, const PruneSpec& spec,
                       const std::optional<ReplacementNet>& replacement = std::nullopt);

// The layers a spec would remove, in model order.
std::vector<TransformerLayerWeights> pruned_layers(const TransformerModel& model, const PruneSpec& spec);

// 1 - params(after) / params(before), counting every tensor.
double sparsity(const TransformerModel& before, const TransformerModel& after);

nlohmann::json spec_to_json(const PruneSpec& spec);
PruneSpec spec_from_json(const nlohmann::json& j);

} // namespace streamline
