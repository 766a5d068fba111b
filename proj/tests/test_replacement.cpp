#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <set>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "streamline/error.hpp"
#include "streamline/io.hpp"
#include "streamline/pruner.hpp"
#include "streamline/trainer.hpp"

using namespace streamline;
using namespace fixtures;
using namespace gradcheck;

namespace {

// Targets produced by `teacher` from random inputs.
HiddenPairDataset teacher_pairs(const ReplacementNet& teacher, const ModelConfig& c, std::size_t count,
                                std::uint64_t seed) {
    HiddenPairDataset ds = random_pairs(c.d_model, count, seed);
    for (HiddenPair& p : ds.pairs) {
        Graph g;
        const ParamBinding b = bind_params(g, teacher.params, false);
        p.target = g.value(replacement_forward(g, g.leaf(p.input), teacher, b, c));
    }
    return ds;
}

} // namespace

TEST_CASE("init strategies") {
    const ModelConfig c = tiny_config();
    const TransformerModel m = lively_model(c, 41);
    const std::vector<TransformerLayerWeights> pruned{m.layers[1], m.layers[2], m.layers[3]};

    SUBCASE("first and last copy the pruned layers bit for bit") {
        const ReplacementNet first = init_replacement(ReplacementKind::TransformerLayer, InitStrategy::First, pruned, c);
        const ReplacementNet last = init_replacement(ReplacementKind::TransformerLayer, InitStrategy::Last, pruned, c);
        CHECK(layer_from_params(first.params) == m.layers[1]);
        CHECK(layer_from_params(last.params) == m.layers[3]);
        CHECK(first.init == InitStrategy::First);
    }
    SUBCASE("avg is the elementwise mean") {
        const ReplacementNet avg = init_replacement(ReplacementKind::TransformerLayer, InitStrategy::Avg, pruned, c);
        const ParamMap a = layer_params(m.layers[1]), b = layer_params(m.layers[2]), d = layer_params(m.layers[3]);
        for (const auto& [name, t] : avg.params) {
            for (std::size_t i = 0; i < t.size(); ++i) {
                const double mean = (static_cast<double>(a.at(name)[i]) + b.at(name)[i] + d.at(name)[i]) / 3.0;
                REQUIRE(t[i] == static_cast<float>(mean));
            }
        }
    }
    SUBCASE("avg of 2 and 4 is 3, avg of twins is the twin") {
        TransformerModel two = m;
        for (auto& [name, t] : named_tensors(two)) *t = Tensor(t->shape(), 2.0f);
        TransformerModel four = m;
        for (auto& [name, t] : named_tensors(four)) *t = Tensor(t->shape(), 4.0f);
        const ReplacementNet avg =
            init_replacement(ReplacementKind::TransformerLayer, InitStrategy::Avg, {two.layers[0], four.layers[0]}, c);
        for (const auto& [name, t] : avg.params) {
            for (float v : t.data()) REQUIRE(v == 3.0f);
        }
        const ReplacementNet twin =
            init_replacement(ReplacementKind::TransformerLayer, InitStrategy::Avg, {m.layers[2], m.layers[2]}, c);
        CHECK(layer_from_params(twin.params) == m.layers[2]);
    }
    SUBCASE("random residual feed-forward nets start as the identity") {
        for (ReplacementKind kind : {ReplacementKind::FFN, ReplacementKind::SwiGLU}) {
            const ReplacementNet net = init_replacement(kind, InitStrategy::Random, {}, c, 12, true, 3);
            CHECK(net.d_inner == 12);
            Rng rng(4);
            const Tensor x = Tensor::randn({5, c.d_model}, 1.0f, rng);
            Graph g;
            const ParamBinding b = bind_params(g, net.params, false);
            CHECK(g.value(replacement_forward(g, g.leaf(x), net, b, c)).bit_equal(x));
        }
        const ReplacementNet direct = init_replacement(ReplacementKind::FFN, InitStrategy::Random, {}, c, 0, false, 3);
        CHECK(direct.d_inner == c.d_ff);
        CHECK(direct.params.count("norm") == 0);
    }
    SUBCASE("seeded") {
        const auto a = init_replacement(ReplacementKind::SwiGLU, InitStrategy::Random, {}, c, 0, true, 9);
        const auto b = init_replacement(ReplacementKind::SwiGLU, InitStrategy::Random, {}, c, 0, true, 9);
        const auto d = init_replacement(ReplacementKind::SwiGLU, InitStrategy::Random, {}, c, 0, true, 10);
        CHECK(a == b);
        CHECK_FALSE(a == d);
    }
    SUBCASE("strategy and kind mismatches") {
        CHECK_THROWS_AS(init_replacement(ReplacementKind::FFN, InitStrategy::Avg, pruned, c), ConfigError);
        CHECK_THROWS_AS(init_replacement(ReplacementKind::TransformerLayer, InitStrategy::First, {}, c), ConfigError);
        CHECK_THROWS_AS(init_replacement(ReplacementKind::TransformerLayer, InitStrategy::Random, {}, c, 0, false),
                        ConfigError);
        CHECK_THROWS_AS(parse_init_strategy("mean"), ConfigError);
        CHECK_THROWS_AS(parse_replacement_kind("mlp"), ConfigError);
        const ReplacementNet none = init_replacement(ReplacementKind::None, InitStrategy::Random, {}, c);
        CHECK(none.params.empty());
        CHECK(none.parameter_count() == 0);
    }
}

TEST_CASE("batch gradients match finite differences of a double oracle") {
    for (const auto& [kind, error] : gradcheck::replacement_gradient_errors()) {
        CAPTURE(kind);
        CHECK(error < (kind.ends_with("loss") ? 1e-5 : 1e-3));
    }
}

TEST_CASE("evaluate_replacement_mse against the oracle") {
    const ModelConfig c = tiny_config();
    const HiddenPairDataset ds = random_pairs(c.d_model, 7, 18);
    const ReplacementNet net =
        perturbed(init_replacement(ReplacementKind::SwiGLU, InitStrategy::Random, {}, c, 0, true, 5), 6);
    std::vector<std::size_t> all{0, 1, 2, 3, 4, 5, 6};
    const double expected = oracle_loss(net, flatten(net.params), ds, all, c);
    CHECK(std::abs(evaluate_replacement_mse(net, ds, c) - expected) < 1e-6 * expected);

    std::vector<std::size_t> some{1, 4};
    CHECK(std::abs(evaluate_replacement_mse(net, ds, c, &some) - oracle_loss(net, flatten(net.params), ds, some, c)) <
          1e-6 * expected);

    // The identity net scores the raw input/target gap.
    const ReplacementNet id = init_replacement(ReplacementKind::FFN, InitStrategy::Random, {}, c, 4, true, 1);
    double sum = 0.0;
    std::size_t count = 0;
    for (const HiddenPair& p : ds.pairs) {
        for (std::size_t k = 0; k < p.input.size(); ++k) {
            const double e = static_cast<double>(p.input[k]) - p.target[k];
            sum += e * e;
            ++count;
        }
    }
    CHECK(std::abs(evaluate_replacement_mse(id, ds, c) - sum / count) < 1e-12);

    // Constant output c = 0 against constant target t = 2.
    ReplacementNet zero = init_replacement(ReplacementKind::FFN, InitStrategy::Random, {}, c, 4, false, 1);
    zero.params["w_out"] = Tensor({4, c.d_model});
    HiddenPairDataset flat = ds;
    for (HiddenPair& p : flat.pairs) p.target = Tensor(p.target.shape(), 2.0f);
    CHECK(evaluate_replacement_mse(zero, flat, c) == 4.0);

    HiddenPairDataset wrong = ds;
    wrong.d_model = 4;
    CHECK_THROWS_AS(evaluate_replacement_mse(net, wrong, c), DimensionError);
    CHECK_THROWS_AS(evaluate_replacement_mse(net, HiddenPairDataset{}, c), DataError);
}

TEST_CASE("split and epoch order") {
    for (std::size_t n : {2u, 3u, 20u, 101u, 1000u}) {
        const Split s = split_indices(n, 0.05, 7);
        const std::size_t n_val = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(n * 0.05)), 1, n - 1);
        CHECK(s.val.size() == n_val);
        CHECK(s.train.size() + s.val.size() == n);
        std::set<std::size_t> all(s.train.begin(), s.train.end());
        all.insert(s.val.begin(), s.val.end());
        CHECK(all.size() == n);
        CHECK(*all.rbegin() == n - 1);

        const Split again = split_indices(n, 0.05, 7);
        CHECK(again.train == s.train);
        CHECK(again.val == s.val);

        const auto e0 = epoch_order(n, 7, 0), e1 = epoch_order(n, 7, 1);
        CHECK(std::set<std::size_t>(e0.begin(), e0.end()).size() == n);
        CHECK(e0 == epoch_order(n, 7, 0));
        if (n > 3) CHECK_FALSE(e0 == e1);
    }
}

TEST_CASE("AdamW step by hand") {
    ParamMap p;
    p.emplace("w", Tensor({2}, std::vector<float>{1.0f, -2.0f}));
    ParamMap g;
    g.emplace("w", Tensor({2}, std::vector<float>{0.5f, 0.0f}));
    AdamW opt(0.1, 0.01);
    opt.step(p, g);
    // Step 1: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps).
    const double w0 = 1.0 * (1 - 0.1 * 0.01) - 0.1 * 0.5 / (0.5 + 1e-8);
    const double w1 = -2.0 * (1 - 0.1 * 0.01);
    CHECK(p.at("w")[0] == static_cast<float>(w0));
    CHECK(p.at("w")[1] == static_cast<float>(w1));

    opt.step(p, g);
    const double m2 = 0.9 * 0.05 + 0.1 * 0.5, v2 = 0.999 * 0.00025 + 0.001 * 0.25;
    const double mh = m2 / (1 - 0.81), vh = v2 / (1 - 0.999 * 0.999);
    const double w0b = static_cast<double>(static_cast<float>(w0)) * (1 - 0.001) - 0.1 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(p.at("w")[0] == static_cast<float>(w0b));
    CHECK(opt.steps() == 2);
}

TEST_CASE("training") {
    const ModelConfig c = tiny_config();

    SUBCASE("identity data keeps the identity init at zero loss") {
        HiddenPairDataset ds = random_pairs(c.d_model, 40, 21);
        for (HiddenPair& p : ds.pairs) p.target = p.input;
        ReplacementNet net = init_replacement(ReplacementKind::FFN, InitStrategy::Random, {}, c, 8, true, 1);
        TrainConfig cfg;
        cfg.epochs = 3;
        cfg.batch_size = 8;
        cfg.val_fraction = 0.2;
        const TrainReport r = train_replacement(net, ds, cfg, c);
        CHECK(r.initial_val_loss == 0.0);
        CHECK(r.train_loss_curve.front() == 0.0);
        for (double v : r.val_loss_curve) CHECK(v < 1e-12);
    }
    SUBCASE("teacher-student") {
        // Frozen SwiGLU teacher near the student's starting point: the input
        // projections are the student's init plus noise, the output
        // projection is random. A same-shape student gets below 1e-3 of the
        // starting val MSE in 20 epochs.
        ReplacementNet teacher = init_replacement(ReplacementKind::SwiGLU, InitStrategy::Random, {}, c, 16, true, 5);
        Rng rng(78);
        teacher.params["w_down"] = Tensor::randn({16, c.d_model}, 0.3f, rng);
        for (const char* name : {"w_gate", "w_up"}) {
            Tensor& t = teacher.params[name];
            const Tensor noise = Tensor::randn(t.shape(), 0.1f, rng);
            for (std::size_t i = 0; i < t.size(); ++i) t[i] += noise[i];
        }
        const HiddenPairDataset ds = teacher_pairs(teacher, c, 3000, 22);
        ReplacementNet student = init_replacement(ReplacementKind::SwiGLU, InitStrategy::Random, {}, c, 16, true, 5);
        TrainConfig cfg;
        cfg.lr = 2e-3;
        cfg.batch_size = 8;
        cfg.val_fraction = 0.1;
        cfg.seed = 3;
        const TrainReport r = train_replacement(student, ds, cfg, c);
        CHECK(r.val_loss_curve.size() == 20);
        CHECK(r.val_loss_curve[r.best_epoch] <= 1e-3 * r.initial_val_loss);
    }
    SUBCASE("curves, best epoch and determinism") {
        const ReplacementNet teacher =
            perturbed(init_replacement(ReplacementKind::FFN, InitStrategy::Random, {}, c, 16, true, 77), 78, 0.5f);
        const HiddenPairDataset ds = teacher_pairs(teacher, c, 200, 22);
        ReplacementNet student = init_replacement(ReplacementKind::FFN, InitStrategy::Random, {}, c, 16, true, 5);
        TrainConfig cfg;
        cfg.lr = 1e-2;
        cfg.epochs = 30;
        cfg.batch_size = 16;
        cfg.val_fraction = 0.1;
        cfg.seed = 3;
        const TrainReport r = train_replacement(student, ds, cfg, c);
        CHECK(r.n_val == 20);
        CHECK(r.n_train == 180);
        CHECK(r.train_loss_curve.size() == 30 * ((180 + 15) / 16));
        CHECK(r.val_loss_curve.size() == 30);
        CHECK(r.val_loss_curve[r.best_epoch] < 0.05 * r.initial_val_loss);

        // Step 0 loss is the initial net on the first batch.
        const Split split = split_indices(ds.pairs.size(), cfg.val_fraction, cfg.seed);
        const std::vector<std::size_t> order = epoch_order(split.train.size(), cfg.seed, 0);
        std::vector<std::size_t> first;
        for (std::size_t k = 0; k < cfg.batch_size; ++k) first.push_back(split.train[order[k]]);
        const ReplacementNet fresh = init_replacement(ReplacementKind::FFN, InitStrategy::Random, {}, c, 16, true, 5);
        CHECK(std::abs(r.train_loss_curve[0] - evaluate_replacement_mse(fresh, ds, c, &first)) < 1e-6);

        // Earliest argmin, and the returned params are that epoch's params.
        const auto it = std::min_element(r.val_loss_curve.begin(), r.val_loss_curve.end());
        CHECK(r.best_epoch == static_cast<std::size_t>(it - r.val_loss_curve.begin()));
        CHECK(evaluate_replacement_mse(student, ds, c, &split.val) == r.val_loss_curve[r.best_epoch]);
        CHECK(r.final_params_ref == params_digest(student.params));

        // Deterministic in the seed.
        ReplacementNet again = init_replacement(ReplacementKind::FFN, InitStrategy::Random, {}, c, 16, true, 5);
        const TrainReport r2 = train_replacement(again, ds, cfg, c);
        CHECK(r2.final_params_ref == r.final_params_ref);
        CHECK(r2.train_loss_curve == r.train_loss_curve);
        TrainConfig other = cfg;
        other.seed = 4;
        ReplacementNet third = init_replacement(ReplacementKind::FFN, InitStrategy::Random, {}, c, 16, true, 5);
        CHECK(train_replacement(third, ds, other, c).final_params_ref != r.final_params_ref);
    }
    SUBCASE("layer replacement learns a pruned layer") {
        const TransformerModel m = lively_model(c, 43, 0.2f);
        HiddenPairDataset ds = random_pairs(c.d_model, 60, 23);
        ReplacementNet teacher = init_replacement(ReplacementKind::TransformerLayer, InitStrategy::First, {m.layers[2]}, c);
        for (HiddenPair& p : ds.pairs) {
            Graph g;
            const ParamBinding b = bind_params(g, teacher.params, false);
            p.target = g.value(replacement_forward(g, g.leaf(p.input), teacher, b, c));
        }
        ReplacementNet student = init_replacement(ReplacementKind::TransformerLayer, InitStrategy::First, {m.layers[1]}, c);
        TrainConfig cfg = TrainConfig::defaults_for(ReplacementKind::TransformerLayer);
        cfg.lr = 3e-3;
        cfg.epochs = 8;
        cfg.batch_size = 8;
        cfg.val_fraction = 0.2;
        const TrainReport r = train_replacement(student, ds, cfg, c);
        CHECK(r.val_loss_curve[r.best_epoch] < 0.5 * r.initial_val_loss);
    }
    SUBCASE("kind none reports the identity loss") {
        const HiddenPairDataset ds = random_pairs(c.d_model, 20, 24);
        ReplacementNet none = init_replacement(ReplacementKind::None, InitStrategy::Inherited, {}, c);
        TrainConfig cfg;
        cfg.epochs = 4;
        const TrainReport r = train_replacement(none, ds, cfg, c);
        CHECK(r.train_loss_curve.empty());
        CHECK(r.val_loss_curve == std::vector<double>(4, r.initial_val_loss));
    }
    SUBCASE("divergence aborts with the step") {
        HiddenPairDataset ds = random_pairs(c.d_model, 20, 25);
        for (HiddenPair& p : ds.pairs) p.target[0] = std::numeric_limits<float>::infinity();
        ReplacementNet net = init_replacement(ReplacementKind::FFN, InitStrategy::Random, {}, c, 8, true, 1);
        TrainConfig cfg;
        cfg.val_fraction = 0.1;
        try {
            train_replacement(net, ds, cfg, c);
            FAIL("expected NumericError");
        } catch (const NumericError& e) {
            CHECK(std::string(e.what()).find("step 0") != std::string::npos);
        }
    }
    SUBCASE("bad configs") {
        const HiddenPairDataset ds = random_pairs(c.d_model, 20, 26);
        ReplacementNet net = init_replacement(ReplacementKind::FFN, InitStrategy::Random, {}, c, 8, true, 1);
        TrainConfig cfg;
        cfg.lr = 0;
        CHECK_THROWS_AS(train_replacement(net, ds, cfg, c), ConfigError);
        cfg = TrainConfig{};
        cfg.val_fraction = 1.0;
        CHECK_THROWS_AS(train_replacement(net, ds, cfg, c), ConfigError);
        cfg = TrainConfig{};
        CHECK_THROWS_AS(train_replacement(net, HiddenPairDataset{}, cfg, c), DataError);
    }
}

TEST_CASE("splicing a trained net reproduces its targets inside the model") {
    // A model whose block [1, 3) is replaced by a net trained on that block
    // should see its hidden state at tap 1 mapped by the net.
    const ModelConfig c = tiny_config();
    const TransformerModel m = lively_model(c, 44, 0.2f);
    const ReplacementNet net =
        perturbed(init_replacement(ReplacementKind::FFN, InitStrategy::Random, {}, c, 8, true, 1), 2);
    const TransformerModel p = prune(m, PruneSpec{2, 1, Metric::Cosine, "", {}}, net);
    const std::vector<int> ids{3, 1, 4, 1, 5};
    ForwardOptions o;
    o.capture_all = true;
    const ForwardResult dense = forward(m, ids, o);
    const ForwardResult spliced = forward(p, ids, o);
    Graph g;
    const ParamBinding b = bind_params(g, net.params, false);
    const Tensor expected = g.value(replacement_forward(g, g.leaf(*dense.trace.taps.at(1)), net, b, c));
    CHECK(spliced.trace.taps.at(1)->bit_equal(expected));
}

TEST_CASE("train config JSON") {
    TrainConfig cfg = TrainConfig::defaults_for(ReplacementKind::TransformerLayer);
    CHECK(cfg.lr == 1e-5);
    CHECK(cfg.weight_decay == 1e-3);
    cfg.seed = 12;
    CHECK(train_config_from_json(json::parse(train_config_to_json(cfg).dump()), ReplacementKind::TransformerLayer) ==
          cfg);
    // Missing keys fall back to the kind's defaults.
    const TrainConfig partial = train_config_from_json(json{{"epochs", 3}}, ReplacementKind::FFN);
    CHECK(partial.epochs == 3);
    CHECK(partial.lr == 1e-3);
}

TEST_CASE("train report JSON") {
    TrainReport r;
    r.train_loss_curve = {0.5, 0.25, 1.0 / 3.0};
    r.val_loss_curve = {0.3, 0.1 + 0.2};
    r.best_epoch = 1;
    r.initial_val_loss = 0.7;
    r.final_params_ref = "abc";
    r.n_train = 9;
    r.n_val = 1;
    CHECK(report_from_json(json::parse(dump_json(report_to_json(r)))) == r);
    CHECK_THROWS_AS(report_from_json(json{{"best_epoch", 0}}), DataError);
}
