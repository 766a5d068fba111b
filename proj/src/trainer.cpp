#include "streamline/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "streamline/digest.hpp"
#include "streamline/error.hpp"
#include "streamline/graph.hpp"
#include "streamline/rng.hpp"

namespace streamline {

namespace {

Tensor stack_rows(const HiddenPairDataset& ds, std::span<const std::size_t> idx, bool targets) {
    std::size_t rows = 0;
    for (std::size_t i : idx) rows += ds.pairs.at(i).input.rows();
    std::vector<float> data;
    data.reserve(rows * ds.d_model);
    for (std::size_t i : idx) {
        const Tensor& t = targets ? ds.pairs[i].target : ds.pairs[i].input;
        data.insert(data.end(), t.data().begin(), t.data().end());
    }
    return Tensor({rows, ds.d_model}, std::move(data));
}

// Records net(input) for the given pairs as one [sum L x d] node. The
// feed-forward kinds act per row, so their inputs are stacked up front; a
// TransformerLayer attends within each sequence and runs per pair.
Node batch_forward(Graph& g, const ReplacementNet& net, const ParamBinding& p, const HiddenPairDataset& ds,
                   std::span<const std::size_t> idx, const ModelConfig& config) {
    if (net.kind != ReplacementKind::TransformerLayer) {
        return replacement_forward(g, g.leaf(stack_rows(ds, idx, false)), net, p, config);
    }
    std::vector<Node> outs;
    outs.reserve(idx.size());
    for (std::size_t i : idx) outs.push_back(replacement_forward(g, g.leaf_ref(ds.pairs[i].input), net, p, config));
    return outs.size() == 1 ? outs.front() : g.concat_rows(outs);
}

void check_dataset(const HiddenPairDataset& ds, const ReplacementNet& net) {
    if (ds.pairs.empty()) throw DataError("replacement training: the pair dataset is empty");
    if (net.kind != ReplacementKind::None && ds.d_model != net.d_model) {
        throw DimensionError("pair dataset d_model " + std::to_string(ds.d_model) + " does not match replacement d_model " +
                             std::to_string(net.d_model));
    }
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finaliser over (seed, stream)
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace

TrainConfig TrainConfig::defaults_for(ReplacementKind kind) {
    TrainConfig c;
    if (kind == ReplacementKind::TransformerLayer) {
        c.lr = 1e-5;
        c.weight_decay = 1e-3;
    }
    return c;
}

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("train: val_fraction must lie in (0, 1)");
}

ReplacementNet init_replacement(ReplacementKind kind, InitStrategy strategy,
                                const std::vector<TransformerLayerWeights>& pruned, const ModelConfig& config,
                                std::size_t d_inner, bool residual, std::uint64_t seed) {
    ReplacementNet net;
    net.kind = kind;
    net.d_model = config.d_model;
    net.residual = residual;
    net.init = strategy;
    const std::size_t d = config.d_model;

    if (kind == ReplacementKind::None) {
        if (strategy != InitStrategy::Inherited && strategy != InitStrategy::Random) {
            throw ConfigError("init strategy '" + std::string(to_string(strategy)) + "' does not apply to kind none");
        }
        net.init = InitStrategy::Inherited;
        return net;
    }
    if (kind != ReplacementKind::TransformerLayer && strategy != InitStrategy::Random) {
        throw ConfigError("init strategy '" + std::string(to_string(strategy)) + "' applies only to kind layer");
    }

    Rng rng(seed);
    if (kind == ReplacementKind::FFN || kind == ReplacementKind::SwiGLU) {
        net.d_inner = d_inner == 0 ? config.d_ff : d_inner;
        const std::size_t h = net.d_inner;
        const float in_std = 1.0f / std::sqrt(static_cast<float>(d));
        auto out_proj = [&] {
            return residual ? Tensor({h, d}) : Tensor::randn({h, d}, 1.0f / std::sqrt(static_cast<float>(h)), rng);
        };
        if (residual) net.params.emplace("norm", Tensor({d}, 1.0f));
        if (kind == ReplacementKind::FFN) {
            net.params.emplace("w_in", Tensor::randn({d, h}, in_std, rng));
            net.params.emplace("w_out", out_proj());
        } else {
            net.params.emplace("w_gate", Tensor::randn({d, h}, in_std, rng));
            net.params.emplace("w_up", Tensor::randn({d, h}, in_std, rng));
            net.params.emplace("w_down", out_proj());
        }
        net.validate(config);
        return net;
    }

    // TransformerLayer
    if (!residual) throw ConfigError("a TransformerLayer replacement is always residual");
    if (d_inner != 0 && d_inner != config.d_ff) {
        throw ConfigError("a TransformerLayer replacement uses the model's d_ff (" + std::to_string(config.d_ff) + ")");
    }
    net.d_inner = config.d_ff;
    switch (strategy) {
    case InitStrategy::Random: net.params = layer_params(init_layer(config, rng)); break;
    case InitStrategy::First:
    case InitStrategy::Last:
        if (pruned.empty()) throw ConfigError("init strategy first/last needs at least one pruned layer");
        net.params = layer_params(strategy == InitStrategy::First ? pruned.front() : pruned.back());
        break;
    case InitStrategy::Avg: {
        if (pruned.empty()) throw ConfigError("init strategy avg needs at least one pruned layer");
        std::vector<ParamMap> maps;
        for (const auto& l : pruned) maps.push_back(layer_params(l));
        net.params = maps.front();
        for (auto& [name, t] : net.params) {
            std::vector<double> acc(t.size(), 0.0);
            for (const ParamMap& m : maps) {
                const Tensor& src = m.at(name);
                for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += src[i];
            }
            for (std::size_t i = 0; i < acc.size(); ++i) t[i] = static_cast<float>(acc[i] / static_cast<double>(maps.size()));
        }
        break;
    }
    case InitStrategy::Inherited: throw ConfigError("kind layer needs an init strategy of random, first, last or avg");
    }
    net.validate(config);
    return net;
}

Split split_indices(std::size_t n, double val_fraction, std::uint64_t seed) {
    if (n < 2) throw DataError("replacement training needs at least 2 pairs to form a train/val split, got " + std::to_string(n));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(mix_seed(seed, 0));
    rng.shuffle(std::span<std::size_t>(perm));
    const auto want = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction));
    const std::size_t n_val = std::clamp<std::size_t>(want, 1, n - 1);
    Split s;
    s.val.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
    s.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
    return s;
}

std::vector<std::size_t> epoch_order(std::size_t n_train, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(seed, epoch + 1));
    rng.shuffle(std::span<std::size_t>(order));
    return order;
}

AdamW::AdamW(double lr, double weight_decay, double beta1, double beta2, double eps)
    : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

void AdamW::step(ParamMap& params, const ParamMap& grads) {
    std::vector<std::pair<std::string, Tensor*>> refs;
    for (auto& [name, t] : params) refs.emplace_back(name, &t);
    step(refs, grads);
}

void AdamW::step(std::span<const std::pair<std::string, Tensor*>> params, const ParamMap& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (const auto& [name, tensor] : params) {
        Tensor& p = *tensor;
        const Tensor& g = grads.at(name);
        auto& m = m_[name];
        auto& v = v_[name];
        if (m.empty()) {
            m.assign(p.size(), 0.0);
            v.assign(p.size(), 0.0);
        }
        for (std::size_t i = 0; i < p.size(); ++i) {
            double w = static_cast<double>(p[i]) * (1.0 - lr_ * wd_);
            const double gi = g[i];
            m[i] = b1_ * m[i] + (1.0 - b1_) * gi;
            v[i] = b2_ * v[i] + (1.0 - b2_) * gi * gi;
            w -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
            p[i] = static_cast<float>(w);
        }
    }
}

double evaluate_replacement_mse(const ReplacementNet& net, const HiddenPairDataset& ds, const ModelConfig& config,
                                const std::vector<std::size_t>* indices) {
    check_dataset(ds, net);
    std::vector<std::size_t> all;
    if (!indices) {
        all.resize(ds.pairs.size());
        std::iota(all.begin(), all.end(), 0);
        indices = &all;
    }
    if (indices->empty()) throw DataError("evaluate_replacement_mse: no pairs selected");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i : *indices) {
        const HiddenPair& pair = ds.pairs.at(i);
        Graph g;
        const ParamBinding p = bind_params(g, net.params, false);
        const Tensor& y = g.value(replacement_forward(g, g.leaf_ref(pair.input), net, p, config));
        for (std::size_t k = 0; k < y.size(); ++k) {
            const double e = static_cast<double>(y[k]) - pair.target[k];
            sum += e * e;
        }
        count += y.size();
    }
    return sum / static_cast<double>(count);
}

double batch_loss_and_grads(const ReplacementNet& net, const HiddenPairDataset& ds, std::span<const std::size_t> batch,
                            const ModelConfig& config, ParamMap* grads) {
    Graph g;
    const ParamBinding p = bind_params(g, net.params, grads != nullptr);
    Node pred = batch_forward(g, net, p, ds, batch, config);
    Node loss = g.mse(pred, g.leaf(stack_rows(ds, batch, true)));
    const double value = g.value(loss)[0];
    if (grads && std::isfinite(value)) {
        g.backward(loss);
        grads->clear();
        for (const auto& [name, node] : p) grads->emplace(name, g.grad(node));
    }
    return value;
}

TrainReport train_replacement(ReplacementNet& net, const HiddenPairDataset& ds, const TrainConfig& cfg,
                              const ModelConfig& config) {
    cfg.validate();
    check_dataset(ds, net);
    if (net.kind != ReplacementKind::None) net.validate(config);

    const Split split = split_indices(ds.pairs.size(), cfg.val_fraction, cfg.seed);
    TrainReport report;
    report.n_train = split.train.size();
    report.n_val = split.val.size();
    report.initial_val_loss = evaluate_replacement_mse(net, ds, config, &split.val);
    if (net.kind == ReplacementKind::None) {
        report.val_loss_curve.assign(cfg.epochs, report.initial_val_loss);
        report.final_params_ref = params_digest(net.params);
        return report;
    }

    AdamW opt(cfg.lr, cfg.weight_decay);
    ParamMap best = net.params;
    double best_val = 0.0;
    ParamMap grads;
    std::vector<std::size_t> batch;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::vector<std::size_t> order = epoch_order(split.train.size(), cfg.seed, epoch);
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            batch.clear();
            for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch_size); ++k) {
                batch.push_back(split.train[order[k]]);
            }
            const double loss = batch_loss_and_grads(net, ds, batch, config, &grads);
            if (!std::isfinite(loss)) {
                throw NumericError("replacement training diverged: non-finite loss at step " +
                                   std::to_string(report.train_loss_curve.size()) + " (epoch " +
                                   std::to_string(epoch) + ")");
            }
            report.train_loss_curve.push_back(loss);
            opt.step(net.params, grads);
        }
        const double val = evaluate_replacement_mse(net, ds, config, &split.val);
        if (!std::isfinite(val)) {
            throw NumericError("replacement training diverged: non-finite validation loss after epoch " +
                               std::to_string(epoch));
        }
        report.val_loss_curve.push_back(val);
        if (epoch == 0 || val < best_val) {
            best_val = val;
            best = net.params;
            report.best_epoch = epoch;
        }
    }
    net.params = std::move(best);
    report.final_params_ref = params_digest(net.params);
    return report;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"lr", c.lr},
            {"weight_decay", c.weight_decay},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"seed", c.seed},
            {"val_fraction", c.val_fraction}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, ReplacementKind kind) {
    TrainConfig c = TrainConfig::defaults_for(kind);
    try {
        c.lr = j.value("lr", c.lr);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.epochs = j.value("epochs", c.epochs);
        c.seed = j.value("seed", c.seed);
        c.val_fraction = j.value("val_fraction", c.val_fraction);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid train config: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json report_to_json(const TrainReport& r) {
    return {{"train_loss_curve", r.train_loss_curve},
            {"val_loss_curve", r.val_loss_curve},
            {"best_epoch", r.best_epoch},
            {"initial_val_loss", r.initial_val_loss},
            {"final_params_ref", r.final_params_ref},
            {"n_train", r.n_train},
            {"n_val", r.n_val}};
}

TrainReport report_from_json(const nlohmann::json& j) {
    TrainReport r;
    try {
        r.train_loss_curve = j.at("train_loss_curve").get<std::vector<double>>();
        r.val_loss_curve = j.at("val_loss_curve").get<std::vector<double>>();
        r.best_epoch = j.at("best_epoch").get<std::size_t>();
        r.initial_val_loss = j.at("initial_val_loss").get<double>();
        r.final_params_ref = j.at("final_params_ref").get<std::string>();
        r.n_train = j.at("n_train").get<std::size_t>();
        r.n_val = j.at("n_val").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("invalid train report: ") + e.what());
    }
    return r;
}

std::string params_digest(const ParamMap& params) {
    Fnv64 h;
    for (const auto& [name, t] : params) {
        h.text(name);
        for (std::size_t dim : t.shape()) h.text(std::to_string(dim));
        h.bytes(t.data().data(), t.size() * sizeof(float));
    }
    return h.hex();
}

} // namespace streamline
