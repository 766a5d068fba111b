#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "streamline/datakit.hpp"
#include "streamline/evaluator.hpp"
#include "streamline/model.hpp"

namespace streamline {

// Offline fixtures so the pipeline runs without external assets.

// Domain tags of DomainMix::pruning_default(), each with its own templated
// text style. Documents are 40..120 bytes.
Corpus synthetic_corpus(std::size_t docs_per_domain, std::uint64_t seed, std::string id = "synthetic");

// Continuation task: the question is the head of a document, the gold choice
// its tail, the distractors tails of other documents. Answer positions are
// drawn uniformly.
ClassificationTask synthetic_task(const Corpus& corpus, std::string name, std::size_t n_samples, std::size_t k,
                                  std::uint64_t seed);

struct PretrainConfig {
    std::size_t steps = 150;
    std::size_t batch = 4;
    double lr = 3e-3;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
};

// Next-token cross-entropy training of every model tensor on whole
// documents. Returns the per-step loss.
std::vector<double> pretrain_lm(TransformerModel& model, const Corpus& corpus, const PretrainConfig& cfg);

struct ToyModelOptions {
    ModelConfig config;
    std::uint64_t seed = 0;
    PretrainConfig pretrain;
    bool do_pretrain = true;
    // Layers whose output projections are zeroed after pretraining.
    std::vector<std::size_t> zero_effect;
};

TransformerModel toy_model(const ToyModelOptions& options, const Corpus& corpus);

} // namespace streamline
