#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pfedsim/backprop.hpp"
#include "pfedsim/losses.hpp"
#include "pfedsim/network.hpp"

using namespace pfedsim;

namespace {

Network single_dense(std::size_t in, std::size_t out, std::vector<double> w,
                     std::vector<double> b) {
    Network net;
    net.input_width = in;
    net.head_width = out;
    DenseLayer d;
    d.in = in;
    d.out = out;
    d.w = std::move(w);
    d.b = std::move(b);
    net.layers.emplace_back(std::move(d));
    net.validate();
    return net;
}

}  // namespace

TEST_CASE("forward: zero-weight network yields zero logits") {
    Network net = single_dense(3, 2, std::vector<double>(6, 0.0), {0.0, 0.0});
    Tensor batch = Tensor::from_rows({{1.0, -2.0, 3.0}, {0.5, 0.5, 0.5}});
    const Logits out = forward(net, batch);
    for (double v : out.values) CHECK(v == 0.0);
}

TEST_CASE("forward: identity single layer reproduces the input") {
    Network net = single_dense(2, 2, {1.0, 0.0, 0.0, 1.0}, {0.0, 0.0});
    const Logits out = forward(net, Tensor::from_rows({{1.0, 2.0}}));
    CHECK(out.at(0, 0) == 1.0);
    CHECK(out.at(0, 1) == 2.0);
}

TEST_CASE("forward: eval mode is bit-identical across calls and mutates nothing") {
    Rng rng(42);
    Network net = make_mlp(4, {8, 5}, 3, rng);
    // push running stats away from the identity init
    Tensor warm(16, 4);
    for (auto& v : warm.values) v = rng.normal();
    (void)forward(net, warm, Mode::train);

    Tensor batch(6, 4);
    for (auto& v : batch.values) v = rng.normal();
    const Network snapshot = net;
    const Logits a = forward(static_cast<const Network&>(net), batch);
    const Logits b = forward(static_cast<const Network&>(net), batch);
    CHECK(a.values == b.values);
    CHECK(same_parameters(net, snapshot));
    // running stats untouched by eval
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto* bn = std::get_if<BatchNormLayer>(&net.layers[i]);
        if (bn == nullptr) continue;
        const auto& bn0 = std::get<BatchNormLayer>(snapshot.layers[i]);
        CHECK(bn->running_mean == bn0.running_mean);
        CHECK(bn->running_var == bn0.running_var);
    }
}

TEST_CASE("forward: train mode updates running statistics") {
    Rng rng(7);
    Network net = make_mlp(4, {6}, 2, rng);
    Tensor batch(8, 4);
    for (auto& v : batch.values) v = rng.normal();
    const Network before = net;
    (void)forward(net, batch, Mode::train);
    bool moved = false;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto* bn = std::get_if<BatchNormLayer>(&net.layers[i]);
        if (bn == nullptr) continue;
        const auto& bn0 = std::get<BatchNormLayer>(before.layers[i]);
        if (bn->running_mean != bn0.running_mean || bn->running_var != bn0.running_var) moved = true;
    }
    CHECK(moved);
}

TEST_CASE("forward: shape and batch-size errors") {
    Rng rng(3);
    Network net = make_mlp(4, {6}, 2, rng);
    Tensor wrong(2, 5);
    CHECK_THROWS_AS(forward(net, wrong, Mode::eval), DimensionError);
    Tensor single(1, 4);
    CHECK_THROWS_AS(forward(net, single, Mode::train), DegenerateBatchError);
    CHECK_NOTHROW(forward(static_cast<const Network&>(net), single));
}

TEST_CASE("softmax rows sum to one and stay inside (0,1)") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t c = 2 + rng.uniform_below(9);
        Tensor logits(1, c);
        // +-15 keeps the largest probability representable below 1.0
        for (auto& v : logits.values) v = rng.uniform(-15.0, 15.0);
        const Tensor p = softmax(logits);
        double sum = 0.0;
        for (double v : p.values) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("cross_entropy matches hand-evaluated values") {
    // -log(0.5) = ln 2
    CHECK(cross_entropy(Tensor::from_rows({{0.0, 0.0}}), {0}) ==
          Catch::Approx(0.6931471805599453).epsilon(1e-12));
    // uniform logits over 4 classes -> ln 4, any label
    CHECK(cross_entropy(Tensor::from_rows({{1.0, 1.0, 1.0, 1.0}}), {2}) ==
          Catch::Approx(1.3862943611198906).epsilon(1e-12));
}

TEST_CASE("cross_entropy: uniform logits give ln|C| for every width") {
    Rng rng(5);
    for (std::size_t c = 2; c <= 12; ++c) {
        const double base = rng.uniform(-5.0, 5.0);
        Tensor logits(1, c, base);
        const double expect = std::log(static_cast<double>(c));
        CHECK(std::abs(cross_entropy(logits, {static_cast<int>(c / 2)}) - expect) < 1e-9);
    }
}

TEST_CASE("cross_entropy: saturated logits stay finite") {
    const double v = cross_entropy(Tensor::from_rows({{1000.0, -1000.0}}), {0});
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
    CHECK(v < 1e-9);
    const double bad = cross_entropy(Tensor::from_rows({{1000.0, -1000.0}}), {1});
    CHECK(std::isfinite(bad));
    CHECK(bad == Catch::Approx(2000.0).epsilon(1e-9));
}

TEST_CASE("cross_entropy: label out of range") {
    CHECK_THROWS_AS(cross_entropy(Tensor::from_rows({{0.0, 0.0}}), {2}), IndexError);
    CHECK_THROWS_AS(cross_entropy(Tensor::from_rows({{0.0, 0.0}}), {-1}), IndexError);
}

TEST_CASE("kl_distill: identical distributions give zero") {
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t c = 2 + rng.uniform_below(6);
        Tensor logits(2, c);
        for (auto& v : logits.values) v = rng.uniform(-10.0, 10.0);
        const double t = 0.25 + rng.uniform() * 4.0;
        CHECK(std::abs(kl_distill(logits, logits, t)) <= 1e-10);
    }
}

TEST_CASE("kl_distill matches the hand-evaluated example") {
    // teacher [ln 3, 0] -> p = [0.75, 0.25]; student [0,0] -> q = [0.5, 0.5]
    const Tensor teacher = Tensor::from_rows({{std::log(3.0), 0.0}});
    const Tensor student = Tensor::from_rows({{0.0, 0.0}});
    const double expect = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
    CHECK(kl_distill(teacher, student, 1.0) == Catch::Approx(expect).epsilon(1e-12));
    CHECK(expect == Catch::Approx(0.1308).margin(5e-5));
}

TEST_CASE("kl_distill: non-negative over random pairs") {
    Rng rng(23);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t c = 2 + rng.uniform_below(8);
        Tensor a(1, c), b(1, c);
        for (auto& v : a.values) v = rng.uniform(-20.0, 20.0);
        for (auto& v : b.values) v = rng.uniform(-20.0, 20.0);
        const double t = 0.5 + rng.uniform() * 3.0;
        CHECK(kl_distill(a, b, t) >= -1e-12);
    }
}

TEST_CASE("kl_distill: parameter and dimension errors") {
    const Tensor a = Tensor::from_rows({{0.0, 1.0}});
    const Tensor b = Tensor::from_rows({{0.0, 1.0, 2.0}});
    CHECK_THROWS_AS(kl_distill(a, b, 1.0), DimensionError);
    CHECK_THROWS_AS(kl_distill(a, a, 0.0), ParameterError);
    CHECK_THROWS_AS(kl_distill(a, a, -2.0), ParameterError);
}

TEST_CASE("kl_distill: saturated logits stay finite") {
    const Tensor t = Tensor::from_rows({{1000.0, -1000.0}});
    const Tensor s = Tensor::from_rows({{-1000.0, 1000.0}});
    const double v = kl_distill(t, s, 1.0);
    CHECK(std::isfinite(v));
    CHECK(v > 0.0);
}

TEST_CASE("network validation catches inconsistent stacks") {
    Network net;
    net.input_width = 3;
    net.head_width = 2;
    DenseLayer d;
    d.in = 4;  // wrong: feed width is 3
    d.out = 2;
    d.w.assign(8, 0.0);
    d.b.assign(2, 0.0);
    net.layers.emplace_back(std::move(d));
    CHECK_THROWS_AS(net.validate(), DimensionError);

    Rng rng(1);
    Network bad_var = make_mlp(3, {4}, 2, rng);
    std::get<BatchNormLayer>(bad_var.layers[1]).running_var[0] = 0.0;
    CHECK_THROWS_AS(bad_var.validate(), ParameterError);
}
