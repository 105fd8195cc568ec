#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "pfedsim/losses.hpp"
#include "pfedsim/network.hpp"
#include "pfedsim/rng.hpp"

namespace pfedsim {

// Velocity buffers for SGD momentum, one per trainable array. Lazily sized on
// first use; a state object belongs to exactly one network.
struct SgdState {
    GradientSet velocity;
};

// One backprop pass plus one SGD update. Teacher/helper logits inside `spec`
// are constants, so the networks that produced them are untouched. Returns
// the loss value at the pre-update parameters.
inline double train_step(Network& net, const Tensor& batch, const LossSpec& spec, double lr,
                         double momentum = 0.0, SgdState* state = nullptr) {
    if (lr < 0.0) throw ParameterError("train_step: lr must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ParameterError("train_step: momentum must be in [0,1)");
    if (momentum > 0.0 && state == nullptr)
        throw ParameterError("train_step: momentum needs an SgdState");

    ForwardTrace trace;
    const Logits logits = forward_traced(net, batch, Mode::train, trace);
    const double loss = loss_value(spec, logits);
    const Tensor dlogits = loss_grad(spec, logits);
    GradientSet grads = backward(net, trace, dlogits);
    for (const auto& g : grads)
        for (double v : g)
            if (!std::isfinite(v)) throw NumericError("non-finite gradient in train_step");

    auto views = param_views(net);
    PFEDSIM_CHECK(views.size() == grads.size(), "gradient/parameter arity mismatch");
    if (state != nullptr && state->velocity.empty()) {
        state->velocity.resize(views.size());
        for (std::size_t i = 0; i < views.size(); ++i)
            state->velocity[i].assign(views[i].values->size(), 0.0);
    }
    for (std::size_t i = 0; i < views.size(); ++i) {
        auto& w = *views[i].values;
        const auto& g = grads[i];
        PFEDSIM_CHECK(w.size() == g.size(), "gradient shape mismatch");
        if (momentum > 0.0) {
            auto& v = state->velocity[i];
            for (std::size_t k = 0; k < w.size(); ++k) {
                v[k] = momentum * v[k] + g[k];
                if (views[i].live == nullptr || (*views[i].live)[k] != 0) w[k] -= lr * v[k];
            }
        } else {
            for (std::size_t k = 0; k < w.size(); ++k)
                if (views[i].live == nullptr || (*views[i].live)[k] != 0) w[k] -= lr * g[k];
        }
    }
    return loss;
}

// Distance of the closest pre-ReLU activation from zero on this batch
// (eval mode). Finite differences are only a valid oracle when parameter
// perturbations cannot flip a ReLU gate, so gradient checks should run on
// batches with a comfortable margin. Infinity when the net has no ReLU.
inline double relu_kink_margin(const Network& net, const Tensor& batch) {
    ForwardTrace trace;
    (void)detail::forward_core(net, batch, Mode::eval, &trace, nullptr);
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        if (std::holds_alternative<ReluLayer>(net.layers[i]))
            for (double v : trace.inputs[i].values) margin = std::min(margin, std::abs(v));
    return margin;
}

// Max relative error between analytic and central-finite-difference gradients
// under the given loss, with batch-norm statistics frozen (eval mode) so the
// loss is a pure function of the parameters. Networks with more than
// `max_checked` parameters get a seeded random subsample of that size.
inline double grad_check(Network& net, const Tensor& batch, const LossSpec& spec, double epsilon,
                         std::size_t max_checked = 400, std::uint64_t seed = 17) {
    if (epsilon < 1e-6 || epsilon > 1e-3)
        throw ParameterError("grad_check: epsilon outside [1e-6, 1e-3]");

    ForwardTrace trace;
    const Logits logits = forward_traced(net, batch, Mode::eval, trace);
    const GradientSet analytic = backward(net, trace, loss_grad(spec, logits));

    auto views = param_views(net);
    struct Slot {
        std::size_t view, idx;
    };
    std::vector<Slot> slots;
    for (std::size_t i = 0; i < views.size(); ++i)
        for (std::size_t k = 0; k < views[i].values->size(); ++k)
            if (views[i].live == nullptr || (*views[i].live)[k] != 0) slots.push_back({i, k});
    if (slots.size() > max_checked) {
        Rng rng(derive_seed(seed, slots.size()));
        rng.shuffle(slots);
        slots.resize(std::max<std::size_t>(max_checked, 200));
    }

    double worst = 0.0;
    for (const auto& s : slots) {
        double& p = (*views[s.view].values)[s.idx];
        const double keep = p;
        p = keep + epsilon;
        const double lo_hi = loss_value(spec, forward(static_cast<const Network&>(net), batch));
        p = keep - epsilon;
        const double lo_lo = loss_value(spec, forward(static_cast<const Network&>(net), batch));
        p = keep;
        const double numeric = (lo_hi - lo_lo) / (2.0 * epsilon);
        const double a = analytic[s.view][s.idx];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
        worst = std::max(worst, rel);
    }
    return worst;
}

// Convenience overload matching the plain CE use.
inline double grad_check(Network& net, const Tensor& batch, const std::vector<int>& labels,
                         double epsilon) {
    return grad_check(net, batch, LossSpec::ce(labels), epsilon);
}

struct GradCheckReport {
    std::string name;
    double max_rel_error = 0.0;
};

// Verification sweep over seeded random architectures mixing Dense, BatchNorm
// and ReLU under CE and CE+KL losses, all in eval mode. Used by the tests and
// the `gradcheck` CLI subcommand.
inline std::vector<GradCheckReport> gradcheck_suite(std::size_t num_archs = 24,
                                                    std::uint64_t seed = 2024,
                                                    double epsilon = 1e-4) {
    std::vector<GradCheckReport> reports;
    for (std::size_t a = 0; a < num_archs; ++a) {
        Rng rng(derive_seed(seed, a));
        const std::size_t input = 2 + rng.uniform_below(6);
        const std::size_t classes = 2 + rng.uniform_below(4);
        const std::size_t depth = rng.uniform_below(3);
        std::vector<std::size_t> hidden;
        for (std::size_t i = 0; i < depth; ++i) hidden.push_back(2 + rng.uniform_below(7));
        const bool with_bn = (a % 3) != 2;
        Network net = make_mlp(input, hidden, classes, rng, with_bn);

        // perturb parameters away from the symmetric init
        for (auto& view : param_views(net))
            for (auto& v : *view.values) v += 0.3 * rng.normal();
        for (auto& layer : net.layers)
            if (auto* bn = std::get_if<BatchNormLayer>(&layer))
                for (auto& rv : bn->running_var) rv = 0.5 + rng.uniform();

        const std::size_t n = 3 + rng.uniform_below(5);
        Tensor batch(n, input);
        // redraw until every pre-ReLU activation clears the kink window,
        // otherwise the central difference is not a valid oracle
        for (int attempt = 0; attempt < 500; ++attempt) {
            for (auto& v : batch.values) v = rng.normal();
            if (relu_kink_margin(net, batch) > 5e-3) break;
        }
        std::vector<int> labels(n);
        for (auto& y : labels) y = static_cast<int>(rng.uniform_below(classes));

        LossSpec spec = LossSpec::ce(labels);
        const bool with_kl = (a % 2) == 1;
        if (with_kl) {
            Tensor teacher_logits(n, classes);
            for (auto& v : teacher_logits.values) v = 2.0 * rng.normal();
            spec.add_kl(std::move(teacher_logits), 0.5 + rng.uniform() * 2.5);
        }

        GradCheckReport rep;
        rep.name = "arch" + std::to_string(a) + "[in=" + std::to_string(input) +
                   ",hidden=" + std::to_string(depth) + (with_bn ? ",bn" : "") +
                   (with_kl ? ",ce+kl]" : ",ce]");
        rep.max_rel_error = grad_check(net, batch, spec, epsilon, 400, derive_seed(seed, a, 7));
        reports.push_back(std::move(rep));
    }
    return reports;
}

}  // namespace pfedsim
