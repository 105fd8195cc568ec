#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pfedsim/backprop.hpp"

using namespace pfedsim;

namespace {

Tensor random_batch(Rng& rng, std::size_t n, std::size_t d) {
    Tensor t(n, d);
    for (auto& v : t.values) v = rng.normal();
    return t;
}

std::vector<int> random_labels(Rng& rng, std::size_t n, std::size_t classes) {
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng.uniform_below(classes));
    return y;
}

}  // namespace

TEST_CASE("train_step: lr=0 leaves parameters bit-identical") {
    Rng rng(101);
    Network net = make_mlp(5, {7}, 3, rng);
    const Network before = net;
    Tensor batch = random_batch(rng, 6, 5);
    (void)train_step(net, batch, LossSpec::ce(random_labels(rng, 6, 3)), 0.0);
    CHECK(same_parameters(net, before));
}

TEST_CASE("train_step: descent on a convex single-layer problem") {
    Rng rng(102);
    Network net;
    net.input_width = 4;
    net.head_width = 2;
    DenseLayer d;
    d.in = 4;
    d.out = 2;
    d.w.resize(8);
    for (auto& v : d.w) v = rng.normal(0.0, 0.5);
    d.b.assign(2, 0.0);
    net.layers.emplace_back(std::move(d));
    net.validate();

    Tensor batch = random_batch(rng, 10, 4);
    const auto labels = random_labels(rng, 10, 2);
    const LossSpec spec = LossSpec::ce(labels);
    const double before = loss_value(spec, forward(static_cast<const Network&>(net), batch));
    (void)train_step(net, batch, spec, 1e-3);
    const double after = loss_value(spec, forward(static_cast<const Network&>(net), batch));
    CHECK(after <= before);
}

TEST_CASE("train_step: momentum-free steps are reproducible") {
    Rng rng(103);
    const Network init = make_mlp(4, {6}, 3, rng);
    Tensor batch = random_batch(rng, 8, 4);
    const auto labels = random_labels(rng, 8, 3);

    Network a = init, b = init;
    (void)train_step(a, batch, LossSpec::ce(labels), 0.05);
    (void)train_step(b, batch, LossSpec::ce(labels), 0.05);
    CHECK(same_parameters(a, b));
}

TEST_CASE("train_step: frozen teacher logits never touch the teacher network") {
    Rng rng(104);
    Network teacher = make_mlp(4, {9}, 3, rng);
    Network student = make_mlp(4, {5}, 3, rng);
    Tensor batch = random_batch(rng, 6, 4);
    const Network teacher_before = teacher;
    LossSpec spec = LossSpec::ce(random_labels(rng, 6, 3));
    spec.add_kl(forward(static_cast<const Network&>(teacher), batch), 2.0);
    (void)train_step(student, batch, spec, 0.01);
    CHECK(same_parameters(teacher, teacher_before));
}

TEST_CASE("train_step: parameter validation") {
    Rng rng(105);
    Network net = make_mlp(3, {}, 2, rng);
    Tensor batch = random_batch(rng, 4, 3);
    const auto labels = random_labels(rng, 4, 2);
    CHECK_THROWS_AS(train_step(net, batch, LossSpec::ce(labels), -0.1), ParameterError);
    CHECK_THROWS_AS(train_step(net, batch, LossSpec::ce(labels), 0.1, 1.0), ParameterError);
    // momentum without state
    CHECK_THROWS_AS(train_step(net, batch, LossSpec::ce(labels), 0.1, 0.5), ParameterError);
}

TEST_CASE("grad_check: linear network with CE") {
    Rng rng(106);
    Network net = make_mlp(4, {}, 3, rng);
    Tensor batch = random_batch(rng, 5, 4);
    CHECK(grad_check(net, batch, random_labels(rng, 5, 3), 1e-4) < 1e-4);
}

TEST_CASE("grad_check: batch-norm network in eval mode") {
    Rng rng(107);
    Network net = make_mlp(5, {8, 6}, 3, rng);
    // move running stats off the init so eval mode is non-trivial
    Tensor warm = random_batch(rng, 32, 5);
    (void)forward(net, warm, Mode::train);
    Tensor batch = random_batch(rng, 6, 5);
    while (relu_kink_margin(net, batch) <= 5e-3) batch = random_batch(rng, 6, 5);
    CHECK(grad_check(net, batch, random_labels(rng, 6, 3), 1e-4) < 1e-4);
}

TEST_CASE("grad_check: zero weights and zero inputs stay finite") {
    Network net;
    net.input_width = 3;
    net.head_width = 2;
    DenseLayer d;
    d.in = 3;
    d.out = 2;
    d.w.assign(6, 0.0);
    d.b.assign(2, 0.0);
    net.layers.emplace_back(std::move(d));
    net.validate();
    Tensor batch(4, 3, 0.0);
    const double err = grad_check(net, batch, std::vector<int>{0, 1, 0, 1}, 1e-4);
    CHECK(std::isfinite(err));
    CHECK(err < 1e-4);
}

TEST_CASE("grad_check: epsilon range enforced") {
    Rng rng(108);
    Network net = make_mlp(3, {}, 2, rng);
    Tensor batch = random_batch(rng, 4, 3);
    const auto labels = random_labels(rng, 4, 2);
    CHECK_THROWS_AS(grad_check(net, batch, LossSpec::ce(labels), 1e-7), ParameterError);
    CHECK_THROWS_AS(grad_check(net, batch, LossSpec::ce(labels), 1e-2), ParameterError);
}

TEST_CASE("gradient of train-mode batch-norm matches finite differences") {
    // train-mode batch statistics depend on upstream parameters, so this
    // exercises the full batch-norm backward, not the eval-mode affine path
    Rng rng(109);
    Network net = make_mlp(4, {6}, 3, rng);
    for (auto& view : param_views(net))
        for (auto& v : *view.values) v += 0.2 * rng.normal();
    Tensor batch = random_batch(rng, 7, 4);
    const auto labels = random_labels(rng, 7, 3);
    const LossSpec spec = LossSpec::ce(labels);

    ForwardTrace trace;
    Network work = net;
    const Logits logits = forward_traced(work, batch, Mode::train, trace);
    const GradientSet analytic = backward(work, trace, loss_grad(spec, logits));

    const double eps = 1e-5;
    auto views = param_views(net);
    double worst = 0.0;
    for (std::size_t vi = 0; vi < views.size(); ++vi) {
        for (std::size_t k = 0; k < views[vi].values->size(); ++k) {
            Network hi = net, lo = net;
            (*param_views(hi)[vi].values)[k] += eps;
            (*param_views(lo)[vi].values)[k] -= eps;
            const double lhi = loss_value(spec, forward(hi, batch, Mode::train));
            const double llo = loss_value(spec, forward(lo, batch, Mode::train));
            const double numeric = (lhi - llo) / (2.0 * eps);
            const double a = analytic[vi][k];
            worst = std::max(worst, std::abs(a - numeric) /
                                        std::max({std::abs(a), std::abs(numeric), 1e-8}));
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("gradcheck_suite: 20+ seeded architectures stay under 1e-4") {
    const auto reports = gradcheck_suite(24, 2024, 1e-4);
    REQUIRE(reports.size() >= 20);
    for (const auto& rep : reports) {
        INFO(rep.name);
        CHECK(rep.max_rel_error < 1e-4);
    }
}

TEST_CASE("train_step: non-finite input surfaces as NumericError") {
    Rng rng(110);
    Network net = make_mlp(3, {}, 2, rng);
    Tensor batch(4, 3, 0.0);
    batch.values[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(train_step(net, batch, LossSpec::ce({0, 1, 0, 1}), 0.1), NumericError);
}
