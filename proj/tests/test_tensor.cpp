#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>

#include "gradcheck.hpp"
#include "oracle.hpp"
#include "streamline/error.hpp"
#include "streamline/graph.hpp"
#include "streamline/rng.hpp"

using namespace streamline;
using oracle::Mat;
using gradcheck::random_tensor;
using gradcheck::scalar_mat;
using gradcheck::gradient_error;

namespace {

Tensor mat(std::size_t r, std::size_t c, std::vector<float> v) { return Tensor({r, c}, std::move(v)); }

} // namespace

TEST_CASE("tensor construction enforces shape invariants") {
    CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
    Tensor t({2, 3}, 1.5f);
    CHECK(t.size() == 6);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
}

TEST_CASE("matmul") {
    Graph g;
    SUBCASE("identity") {
        Node out = g.matmul(g.leaf(mat(2, 2, {1, 0, 0, 1})), g.leaf(mat(2, 1, {3, 4})));
        CHECK(g.value(out) == mat(2, 1, {3, 4}));
    }
    SUBCASE("dot product") {
        Node out = g.matmul(g.leaf(mat(1, 2, {1, 2})), g.leaf(mat(2, 1, {3, 4})));
        CHECK(g.value(out) == mat(1, 1, {11}));
    }
    SUBCASE("shape mismatch names both shapes") {
        try {
            g.matmul(g.leaf(Tensor({2, 3})), g.leaf(Tensor({2, 3})));
            FAIL("expected DimensionError");
        } catch (const DimensionError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("[2x3] x [2x3]") != std::string::npos);
        }
    }
    SUBCASE("gradient of sum(output) w.r.t. a") {
        Tensor a = random_tensor({3, 4}, 1), b = random_tensor({4, 2}, 2);
        Graph gg;
        Node na = gg.leaf(a, true);
        gg.backward(gg.sum(gg.matmul(na, gg.leaf(b))));
        Mat bm = oracle::to_mat(b);
        auto f = [&](const oracle::Vec& x) {
            Mat am(3, 4);
            am.v = x;
            Mat o = oracle::matmul(am, bm);
            double s = 0.0;
            for (double v : o.v) s += v;
            return s;
        };
        const auto fd = oracle::finite_difference(f, oracle::to_mat(a).v);
        CHECK(oracle::relative_error(gg.grad(na), fd) < 1e-4);
    }
}

TEST_CASE("elementwise ops") {
    Graph g;
    CHECK(g.value(g.silu(g.leaf(Tensor::scalar(0.0f))))[0] == 0.0f);
    Node sum = g.add(g.leaf(Tensor({2}, std::vector<float>{1, 2})), g.leaf(Tensor({2}, std::vector<float>{3, 4})));
    CHECK(g.value(sum) == Tensor({2}, std::vector<float>{4, 6}));
    Node bcast = g.mul(g.leaf(Tensor({3}, std::vector<float>{1, 2, 3})), g.leaf(Tensor::scalar(2.0f)));
    CHECK(g.value(bcast) == Tensor({3}, std::vector<float>{2, 4, 6}));
    CHECK_THROWS_AS(g.add(g.leaf(Tensor({2})), g.leaf(Tensor({3}))), DimensionError);

    SUBCASE("silu gradient at 1") {
        Graph gg;
        Node x = gg.leaf(Tensor::scalar(1.0f), true);
        gg.backward(gg.silu(x));
        const double fd = (oracle::silu(1.0 + 1e-3) - oracle::silu(1.0 - 1e-3)) / 2e-3;
        CHECK(std::abs(gg.grad(x)[0] - fd) < 1e-5);
    }
}

TEST_CASE("rmsnorm") {
    Graph g;
    Node ones = g.leaf(Tensor({4}, 1.0f));
    Node y = g.rmsnorm(g.leaf(Tensor({1, 4}, 2.0f)), ones, 0.0f);
    CHECK(g.value(y) == Tensor({1, 4}, 1.0f));
    Node z = g.rmsnorm(g.leaf(Tensor({1, 4}, 0.0f)), ones, 1e-6f);
    CHECK(g.value(z) == Tensor({1, 4}, 0.0f));
    CHECK_THROWS_AS(g.rmsnorm(g.leaf(Tensor({1, 4})), g.leaf(Tensor({3}, 1.0f)), 1e-5f), DimensionError);

    Tensor x = random_tensor({1, 6}, 3);
    Tensor gain = random_tensor({6}, 4);
    const double err = gradient_error(
        {x, gain}, [](Graph& gg, const std::vector<Node>& in) { return gg.rmsnorm(in[0], in[1], 1e-5f); },
        [](const std::vector<Mat>& in) { return oracle::rmsnorm(in[0], in[1].v, 1e-5); });
    CHECK(err < 1e-4);
}

TEST_CASE("softmax_ce") {
    Graph g;
    const std::vector<int> one{2};
    Node uniform = g.softmax_ce(g.leaf(Tensor({1, 4}, 0.0f)), one);
    CHECK(g.value(uniform)[0] == doctest::Approx(std::log(4.0)).epsilon(1e-7));

    Tensor peaked({1, 4}, 0.0f);
    peaked.at(0, 2) = 1e4f;
    CHECK(g.value(g.softmax_ce(g.leaf(peaked), one))[0] == doctest::Approx(0.0).epsilon(1e-12));

    const std::vector<int> targets{0, 6, 3, 3, 1};
    Tensor logits = random_tensor({5, 7}, 5, 3.0f);
    const double expected = oracle::softmax_ce(oracle::to_mat(logits), targets);
    CHECK(std::abs(g.value(g.softmax_ce(g.leaf(logits), targets))[0] - expected) < 1e-6);

    SUBCASE("shift invariance per row") {
        Tensor shifted = logits;
        for (std::size_t r = 0; r < 5; ++r)
            for (std::size_t c = 0; c < 7; ++c) shifted.at(r, c) += 10.0f * static_cast<float>(r) - 3.0f;
        Graph gg;
        const float a = gg.value(gg.softmax_ce(gg.leaf(logits), targets))[0];
        const float b = gg.value(gg.softmax_ce(gg.leaf(shifted), targets))[0];
        CHECK(std::abs(a - b) < 1e-6);
    }
    SUBCASE("target out of range") {
        const std::vector<int> bad{4};
        CHECK_THROWS_AS(g.softmax_ce(g.leaf(Tensor({1, 4})), bad), ContractError);
    }
}

TEST_CASE("backward") {
    SUBCASE("sum gives all-ones") {
        Graph g;
        Node w = g.leaf(random_tensor({2, 3}, 9), true);
        g.backward(g.sum(w));
        CHECK(g.grad(w) == Tensor({2, 3}, 1.0f));
    }
    SUBCASE("hand chain rule through mse") {
        Graph g;
        Node w = g.leaf(Tensor::scalar(2.0f), true);
        Node pred = g.mul(w, g.leaf(Tensor::scalar(3.0f)));
        g.backward(g.mse(pred, g.leaf(Tensor::scalar(0.0f))));
        CHECK(g.grad(w)[0] == 36.0f);
    }
    SUBCASE("non-scalar loss is a contract error") {
        Graph g;
        Node w = g.leaf(Tensor({2}), true);
        CHECK_THROWS_AS(g.backward(w), ContractError);
    }
    SUBCASE("deterministic across identical graphs") {
        auto run = [] {
            Graph g;
            Node a = g.leaf(random_tensor({4, 5}, 11), true);
            Node b = g.leaf(random_tensor({5, 3}, 12), true);
            Node y = g.silu(g.matmul(a, b));
            g.backward(g.mean(g.mul(y, y)));
            return std::make_pair(g.grad(a), g.grad(b));
        };
        auto [a1, b1] = run();
        auto [a2, b2] = run();
        CHECK(a1.bit_equal(a2));
        CHECK(b1.bit_equal(b2));
    }
}

TEST_CASE("finite-difference property over the op set") {
    for (std::uint64_t seed = 100; seed < 105; ++seed) {
        CAPTURE(seed);
        for (const auto& [op, error] : gradcheck::op_gradient_errors(seed)) {
            CAPTURE(op);
            CHECK(error < 1e-4);
        }
    }
}

TEST_CASE("forward is bit-deterministic") {
    auto run = [] {
        Graph g;
        Node x = g.leaf(random_tensor({6, 8}, 21));
        Node w = g.leaf(random_tensor({8, 8}, 22));
        Node y = g.rope(g.rmsnorm(g.matmul(x, w), g.leaf(Tensor({8}, 1.0f)), 1e-5f), 2);
        return g.value(g.causal_softmax(g.matmul(y, g.transpose(y))));
    };
    CHECK(run().bit_equal(run()));
}
