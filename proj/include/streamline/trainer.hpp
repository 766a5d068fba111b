#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "streamline/datakit.hpp"
#include "streamline/model.hpp"
#include "streamline/replacement.hpp"

namespace streamline {

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 1e-4;
    std::size_t batch_size = 32;
    std::size_t epochs = 20;
    std::uint64_t seed = 0;
    double val_fraction = 0.05;

    // FFN/SwiGLU: lr 1e-3, wd 1e-4. TransformerLayer: lr 1e-5, wd 1e-3.
    static TrainConfig defaults_for(ReplacementKind kind);
    void validate() const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct TrainReport {
    std::vector<double> train_loss_curve;  // one entry per optimizer step
    std::vector<double> val_loss_curve;    // one entry per epoch
    std::size_t best_epoch = 0;            // 0-based; earliest argmin of val_loss_curve
    double initial_val_loss = 0.0;
    std::string final_params_ref;          // digest of the returned parameters
    std::size_t n_train = 0;
    std::size_t n_val = 0;

    friend bool operator==(const TrainReport&, const TrainReport&) = default;
};

// Builds a replacement net.
//   FFN / SwiGLU + Random: input projections ~ N(0, 1/sqrt(d)), norm gain 1;
//     the output projection is zero in residual form (the net starts as the
//     identity) and ~ N(0, 1/sqrt(d_inner)) in direct form.
//   TransformerLayer + Random: a fresh layer as init_layer draws it.
//   TransformerLayer + First / Last: copy of the first / last pruned layer.
//   TransformerLayer + Avg: elementwise mean of the pruned layers.
//   None: no parameters.
// d_inner == 0 selects config.d_ff. Throws ConfigError on a strategy that
// does not apply to the kind.
ReplacementNet init_replacement(ReplacementKind kind, InitStrategy strategy,
                                const std::vector<TransformerLayerWeights>& pruned_layers, const ModelConfig& config,
                                std::size_t d_inner = 0, bool residual = true, std::uint64_t seed = 0);

// Seeded permutation; the first n_val entries are the validation split.
// n_val = round(n * val_fraction) clamped to [1, n - 1].
struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};
Split split_indices(std::size_t n, double val_fraction, std::uint64_t seed);

// Order in which training pairs are visited during `epoch`.
std::vector<std::size_t> epoch_order(std::size_t n_train, std::uint64_t seed, std::size_t epoch);

// Decoupled-weight-decay Adam: p -= lr*wd*p, then the bias-corrected
// moment step. Moments are kept per parameter name.
class AdamW {
public:
    AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(ParamMap& params, const ParamMap& grads);
    void step(std::span<const std::pair<std::string, Tensor*>> params, const ParamMap& grads);
    std::size_t steps() const { return t_; }

private:
    double lr_, wd_, b1_, b2_, eps_;
    std::size_t t_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

// Mean squared error over every token and dimension of the given pairs
// (all pairs when `indices` is null). No gradient is recorded.
double evaluate_replacement_mse(const ReplacementNet& net, const HiddenPairDataset& dataset, const ModelConfig& config,
                                const std::vector<std::size_t>* indices = nullptr);

// Loss of one mini-batch plus gradients for every parameter.
double batch_loss_and_grads(const ReplacementNet& net, const HiddenPairDataset& dataset,
                            std::span<const std::size_t> batch, const ModelConfig& config, ParamMap* grads);

// Minimises token-level MSE between net(input) and target. On return `net`
// holds the parameters of the best validation epoch. kind None is a no-op
// that only reports the identity loss. Throws NumericError on a non-finite
// loss, naming the step.
TrainReport train_replacement(ReplacementNet& net, const HiddenPairDataset& dataset, const TrainConfig& cfg,
                              const ModelConfig& config);

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, ReplacementKind kind);
nlohmann::json report_to_json(const TrainReport& report);
// Throws DataError on a malformed report.
TrainReport report_from_json(const nlohmann::json& j);

std::string params_digest(const ParamMap& params);

} // namespace streamline
