#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "pfedsim/errors.hpp"
#include "pfedsim/network.hpp"
#include "pfedsim/tensor.hpp"

namespace pfedsim {

// Log-sum-exp stabilized softmax utilities. Saturated logits (|z| ~ 1e3)
// must stay finite through every loss here.

inline void log_softmax_row(const double* z, std::size_t n, double inv_t, double* out) {
    double m = -1e300;
    for (std::size_t i = 0; i < n; ++i) m = std::max(m, z[i] * inv_t);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += std::exp(z[i] * inv_t - m);
    const double lse = m + std::log(sum);
    for (std::size_t i = 0; i < n; ++i) out[i] = z[i] * inv_t - lse;
}

inline void softmax_row(const double* z, std::size_t n, double inv_t, double* out) {
    log_softmax_row(z, n, inv_t, out);
    for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(out[i]);
}

inline Tensor softmax(const Logits& logits, double temperature = 1.0) {
    if (temperature <= 0.0) throw ParameterError("softmax: temperature must be > 0");
    Tensor p(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r)
        softmax_row(logits.row(r), logits.cols(), 1.0 / temperature, p.row(r));
    return p;
}

// Mean over the batch of -log softmax(logits)[label].
inline double cross_entropy(const Logits& logits, const std::vector<int>& labels) {
    if (logits.rows() == 0) throw DimensionError("cross_entropy: empty batch");
    if (labels.size() != logits.rows())
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(logits.rows()) + " rows");
    const std::size_t c = logits.cols();
    std::vector<double> lsm(c);
    double total = 0.0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const int y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw IndexError("cross_entropy: label " + std::to_string(y) + " out of range [0," +
                             std::to_string(c) + ")");
        log_softmax_row(logits.row(r), c, 1.0, lsm.data());
        total -= lsm[static_cast<std::size_t>(y)];
    }
    return total / static_cast<double>(logits.rows());
}

// dL/dlogits of cross_entropy, already divided by the batch size.
inline Tensor cross_entropy_grad(const Logits& logits, const std::vector<int>& labels) {
    Tensor g = softmax(logits);
    const double inv_n = 1.0 / static_cast<double>(logits.rows());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        g.at(r, static_cast<std::size_t>(labels[r])) -= 1.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) g.at(r, j) *= inv_n;
    }
    return g;
}

// Mean over the batch of KL(softmax(teacher/T) || softmax(student/T)).
// The teacher side is a constant; gradients only ever flow to the student.
// `reversed` swaps the argument order to KL(student || teacher).
inline double kl_distill(const Logits& teacher, const Logits& student, double temperature,
                         bool reversed = false) {
    if (temperature <= 0.0) throw ParameterError("kl_distill: temperature must be > 0");
    if (teacher.rows() != student.rows() || teacher.cols() != student.cols())
        throw DimensionError("kl_distill: teacher " + std::to_string(teacher.rows()) + "x" +
                             std::to_string(teacher.cols()) + " vs student " +
                             std::to_string(student.rows()) + "x" + std::to_string(student.cols()));
    if (teacher.rows() == 0) throw DimensionError("kl_distill: empty batch");
    const std::size_t c = teacher.cols();
    const double inv_t = 1.0 / temperature;
    std::vector<double> log_p(c), log_q(c);
    double total = 0.0;
    for (std::size_t r = 0; r < teacher.rows(); ++r) {
        log_softmax_row(teacher.row(r), c, inv_t, log_p.data());
        log_softmax_row(student.row(r), c, inv_t, log_q.data());
        double kl = 0.0;
        if (!reversed) {
            for (std::size_t j = 0; j < c; ++j) kl += std::exp(log_p[j]) * (log_p[j] - log_q[j]);
        } else {
            for (std::size_t j = 0; j < c; ++j) kl += std::exp(log_q[j]) * (log_q[j] - log_p[j]);
        }
        total += kl;
    }
    return total / static_cast<double>(teacher.rows());
}

// dL/d(student logits) of kl_distill, already divided by the batch size.
inline Tensor kl_distill_grad(const Logits& teacher, const Logits& student, double temperature,
                              bool reversed = false) {
    if (temperature <= 0.0) throw ParameterError("kl_distill: temperature must be > 0");
    if (teacher.rows() != student.rows() || teacher.cols() != student.cols())
        throw DimensionError("kl_distill_grad: shape mismatch");
    const std::size_t c = teacher.cols();
    const double inv_t = 1.0 / temperature;
    const double inv_n = 1.0 / static_cast<double>(student.rows());
    Tensor g(student.rows(), c);
    std::vector<double> log_p(c), log_q(c);
    for (std::size_t r = 0; r < student.rows(); ++r) {
        log_softmax_row(teacher.row(r), c, inv_t, log_p.data());
        log_softmax_row(student.row(r), c, inv_t, log_q.data());
        if (!reversed) {
            // d/dz mean KL(p||q(z/T)) = (q - p) / (T N)
            for (std::size_t j = 0; j < c; ++j)
                g.at(r, j) = (std::exp(log_q[j]) - std::exp(log_p[j])) * inv_t * inv_n;
        } else {
            double kl = 0.0;
            for (std::size_t j = 0; j < c; ++j) kl += std::exp(log_q[j]) * (log_q[j] - log_p[j]);
            for (std::size_t j = 0; j < c; ++j)
                g.at(r, j) = std::exp(log_q[j]) * ((log_q[j] - log_p[j]) - kl) * inv_t * inv_n;
        }
    }
    return g;
}

// Weighted sum of one optional cross-entropy term and any number of frozen
// distillation targets. This is the loss shape every training step in the
// protocol uses (plain CE, CE+teacher, CE+helpers+teacher).
struct LossSpec {
    struct KlTerm {
        Logits target_logits;  // frozen; produced by an eval-mode forward elsewhere
        double coef = 1.0;
        double temperature = 1.0;
        std::string name = "kl_distill";
    };

    double ce_coef = 0.0;
    std::vector<int> labels;  // required when ce_coef != 0
    std::vector<KlTerm> kl_terms;
    bool reversed_kl = false;

    static LossSpec ce(std::vector<int> labels, double coef = 1.0) {
        LossSpec s;
        s.ce_coef = coef;
        s.labels = std::move(labels);
        return s;
    }

    LossSpec& add_kl(Logits target, double temperature, double coef = 1.0,
                     std::string name = "kl_distill") {
        kl_terms.push_back({std::move(target), coef, temperature, std::move(name)});
        return *this;
    }
};

// Total loss value; throws NumericError naming the first non-finite term.
inline double loss_value(const LossSpec& spec, const Logits& logits) {
    double total = 0.0;
    if (spec.ce_coef != 0.0) {
        const double v = cross_entropy(logits, spec.labels);
        if (!std::isfinite(v)) throw NumericError("non-finite loss term: cross_entropy");
        total += spec.ce_coef * v;
    }
    for (const auto& term : spec.kl_terms) {
        if (term.coef == 0.0) continue;
        const double v = kl_distill(term.target_logits, logits, term.temperature, spec.reversed_kl);
        if (!std::isfinite(v)) throw NumericError("non-finite loss term: " + term.name);
        total += term.coef * v;
    }
    return total;
}

inline Tensor loss_grad(const LossSpec& spec, const Logits& logits) {
    Tensor g(logits.rows(), logits.cols());
    if (spec.ce_coef != 0.0) {
        const Tensor cg = cross_entropy_grad(logits, spec.labels);
        for (std::size_t k = 0; k < g.values.size(); ++k) g.values[k] += spec.ce_coef * cg.values[k];
    }
    for (const auto& term : spec.kl_terms) {
        if (term.coef == 0.0) continue;
        const Tensor kg = kl_distill_grad(term.target_logits, logits, term.temperature, spec.reversed_kl);
        if (kg.rows() != g.rows() || kg.cols() != g.cols())
            throw DimensionError("loss_grad: kl term '" + term.name + "' batch/width mismatch");
        for (std::size_t k = 0; k < g.values.size(); ++k) g.values[k] += term.coef * kg.values[k];
    }
    return g;
}

}  // namespace pfedsim
