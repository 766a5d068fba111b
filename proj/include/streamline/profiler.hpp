#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "streamline/model.hpp"

namespace streamline {

struct PplGreedy {
    std::vector<int> removal_order;      // original layer labels, first removed first
    std::vector<double> ppl_after_each;  // mean corpus PPL after each removal
    double baseline_ppl = 0.0;

    friend bool operator==(const PplGreedy&, const PplGreedy&) = default;
};

struct ImportanceProfile {
    std::string corpus_id;
    std::size_t n_samples = 0;
    std::size_t n_layers = 0;
    std::vector<double> per_layer_cos;
    std::map<std::pair<std::size_t, std::size_t>, double> block_cos;  // (start, width) -> cos
    std::optional<PplGreedy> ppl_greedy;
    std::size_t skipped_tokens = 0;

    friend bool operator==(const ImportanceProfile&, const ImportanceProfile&) = default;
};

// Token-mean cosine between two [L x d] taps for one sample. Zero-norm rows
// and positions flagged in `exclude` are skipped and added to `skipped`.
// Returns nullopt when every position was skipped.
std::optional<double> sample_cosine(const Tensor& a, const Tensor& b, std::size_t& skipped,
                                    const std::vector<bool>* exclude = nullptr);

// Per-token cosine between taps n layers apart, averaged over the tokens of
// each sample and then over samples with equal weight. Width 1 is always
// computed. Pad tokens (id 0) are excluded. A sample whose tokens are all
// skipped for some (start, width) does not count toward that entry; an entry
// with no contributing sample raises DataError.
ImportanceProfile cosine_profile(const TransformerModel& model, const std::vector<std::vector<int>>& samples,
                                 const std::set<std::size_t>& widths, const std::string& corpus_id,
                                 std::size_t threads = 1);

// Same reduction over pre-computed traces (every tap present).
ImportanceProfile cosine_profile_from_traces(const std::vector<ActivationTrace>& traces,
                                             const std::set<std::size_t>& widths, const std::string& corpus_id,
                                             const std::vector<std::vector<bool>>* exclude = nullptr);

// Mean of per-sample sentence PPLs.
double corpus_ppl(const TransformerModel& model, const std::vector<std::vector<int>>& samples,
                  std::size_t threads = 1);

// Repeatedly removes the single layer whose removal gives the lowest mean
// corpus PPL. Ties go to the deepest remaining layer.
PplGreedy ppl_greedy_profile(const TransformerModel& model, const std::vector<std::vector<int>>& samples,
                             std::size_t n_remove, std::size_t threads = 1);

// Block chosen by each profile under the cosine metric at width n, and the
// first n greedy removals when both profiles carry them.
nlohmann::json compare_metrics(const ImportanceProfile& a, const ImportanceProfile& b, std::size_t n);

nlohmann::json profile_to_json(const ImportanceProfile& profile);
ImportanceProfile profile_from_json(const nlohmann::json& j);
// Digest of the serialized profile; used as PruneSpec::profile_ref.
std::string profile_id(const ImportanceProfile& profile);

} // namespace streamline
