#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "pfedsim/errors.hpp"
#include "pfedsim/rng.hpp"
#include "pfedsim/tensor.hpp"

namespace pfedsim {

// Logits are plain tensors: one row per sample, head_width columns.
using Logits = Tensor;

enum class Mode { train, eval };

// Fully connected layer, weights out x in row-major. `live` is empty for a
// dense layer; after magnitude pruning it flags which weights are still
// trainable (0 entries are frozen at exactly 0).
struct DenseLayer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> w;
    std::vector<double> b;
    std::vector<std::uint8_t> live;

    bool is_live(std::size_t flat) const { return live.empty() || live[flat] != 0; }
    std::size_t live_weight_count() const {
        if (live.empty()) return w.size();
        std::size_t n = 0;
        for (auto x : live) n += (x != 0);
        return n;
    }
};

struct BatchNormLayer {
    std::size_t width = 0;
    std::vector<double> scale;
    std::vector<double> shift;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double eps = 1e-5;
};

struct ReluLayer {};

using Layer = std::variant<DenseLayer, BatchNormLayer, ReluLayer>;

struct Network {
    std::vector<Layer> layers;
    std::size_t input_width = 0;
    std::size_t head_width = 0;

    // Checks layer adjacency, the final head, and batch-norm positivity.
    void validate() const {
        std::size_t width = input_width;
        const DenseLayer* last_dense = nullptr;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (const auto* d = std::get_if<DenseLayer>(&layers[i])) {
                if (d->in != width)
                    throw DimensionError("layer " + std::to_string(i) + ": dense expects in=" +
                                         std::to_string(d->in) + " but feed width is " +
                                         std::to_string(width));
                if (d->w.size() != d->in * d->out || d->b.size() != d->out)
                    throw DimensionError("layer " + std::to_string(i) + ": dense storage size mismatch");
                if (!d->live.empty() && d->live.size() != d->w.size())
                    throw DimensionError("layer " + std::to_string(i) + ": live mask size mismatch");
                width = d->out;
                last_dense = d;
            } else if (const auto* bn = std::get_if<BatchNormLayer>(&layers[i])) {
                if (bn->width != width)
                    throw DimensionError("layer " + std::to_string(i) + ": batch-norm width " +
                                         std::to_string(bn->width) + " vs feed width " +
                                         std::to_string(width));
                if (bn->scale.size() != bn->width || bn->shift.size() != bn->width ||
                    bn->running_mean.size() != bn->width || bn->running_var.size() != bn->width)
                    throw DimensionError("layer " + std::to_string(i) + ": batch-norm storage size mismatch");
                for (double v : bn->running_var)
                    if (!(v > 0.0))
                        throw ParameterError("layer " + std::to_string(i) +
                                             ": batch-norm running_var must be strictly positive");
            }
        }
        if (last_dense == nullptr || width != head_width)
            throw DimensionError("network must end in a dense head of width " +
                                 std::to_string(head_width));
    }
};

// One trainable array plus, for dense weights, the frozen-slot mask.
struct ParamView {
    std::vector<double>* values = nullptr;
    const std::vector<std::uint8_t>* live = nullptr;
};

inline std::vector<ParamView> param_views(Network& net) {
    std::vector<ParamView> out;
    for (auto& layer : net.layers) {
        if (auto* d = std::get_if<DenseLayer>(&layer)) {
            out.push_back({&d->w, d->live.empty() ? nullptr : &d->live});
            out.push_back({&d->b, nullptr});
        } else if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
            out.push_back({&bn->scale, nullptr});
            out.push_back({&bn->shift, nullptr});
        }
    }
    return out;
}

// One gradient array per trainable parameter array, same order as param_views.
using GradientSet = std::vector<std::vector<double>>;

inline bool same_parameters(const Network& a, const Network& b) {
    auto& an = const_cast<Network&>(a);
    auto& bn = const_cast<Network&>(b);
    auto va = param_views(an), vb = param_views(bn);
    if (va.size() != vb.size()) return false;
    for (std::size_t i = 0; i < va.size(); ++i)
        if (*va[i].values != *vb[i].values) return false;
    return true;
}

// Per-layer activations recorded on the forward pass for backprop.
struct ForwardTrace {
    Mode mode = Mode::eval;
    std::vector<Tensor> inputs;        // input tensor of each layer
    std::vector<Tensor> bn_xhat;       // normalized activations, BN layers only
    std::vector<std::vector<double>> bn_mean;  // batch mean, BN train mode only
    std::vector<std::vector<double>> bn_var;   // batch var (biased), BN train mode only
};

namespace detail {

inline Tensor dense_forward(const DenseLayer& d, const Tensor& x) {
    Tensor y(x.rows(), d.out);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const double* xr = x.row(r);
        double* yr = y.row(r);
        for (std::size_t o = 0; o < d.out; ++o) {
            const double* wrow = d.w.data() + o * d.in;
            double acc = d.b[o];
            for (std::size_t i = 0; i < d.in; ++i) acc += wrow[i] * xr[i];
            yr[o] = acc;
        }
    }
    return y;
}

// `stats` is the layer to receive running-statistic updates in train mode;
// null in eval mode or when the caller wants a pure forward.
inline Tensor bn_forward(const BatchNormLayer& bn, const Tensor& x, Mode mode,
                         BatchNormLayer* stats, ForwardTrace* trace, std::size_t layer_idx) {
    const std::size_t n = x.rows(), w = bn.width;
    Tensor y(n, w);
    Tensor xhat(n, w);
    std::vector<double> mean(w, 0.0), var(w, 0.0);
    if (mode == Mode::train) {
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < w; ++j) mean[j] += x.at(r, j);
        for (std::size_t j = 0; j < w; ++j) mean[j] /= static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < w; ++j) {
                const double c = x.at(r, j) - mean[j];
                var[j] += c * c;
            }
        for (std::size_t j = 0; j < w; ++j) var[j] /= static_cast<double>(n);
        if (stats != nullptr) {
            for (std::size_t j = 0; j < w; ++j) {
                stats->running_mean[j] = (1.0 - bn.momentum) * bn.running_mean[j] + bn.momentum * mean[j];
                // keep running_var strictly positive even for a constant batch
                stats->running_var[j] = (1.0 - bn.momentum) * bn.running_var[j] +
                                        bn.momentum * (var[j] > 0.0 ? var[j] : bn.eps);
            }
        }
    } else {
        mean = bn.running_mean;
        var = bn.running_var;
    }
    for (std::size_t j = 0; j < w; ++j) {
        const double inv = 1.0 / std::sqrt(var[j] + bn.eps);
        for (std::size_t r = 0; r < n; ++r) {
            const double xh = (x.at(r, j) - mean[j]) * inv;
            xhat.at(r, j) = xh;
            y.at(r, j) = bn.scale[j] * xh + bn.shift[j];
        }
    }
    if (trace != nullptr) {
        trace->bn_xhat[layer_idx] = std::move(xhat);
        if (mode == Mode::train) {
            trace->bn_mean[layer_idx] = std::move(mean);
            trace->bn_var[layer_idx] = std::move(var);
        }
    }
    return y;
}

inline Tensor forward_core(const Network& net, const Tensor& batch, Mode mode,
                           ForwardTrace* trace, Network* stats_sink) {
    if (batch.cols() != net.input_width)
        throw DimensionError("forward: batch width " + std::to_string(batch.cols()) +
                             " vs network input width " + std::to_string(net.input_width));
    if (mode == Mode::train && batch.rows() < 2)
        throw DegenerateBatchError("train-mode forward needs a batch of at least 2 samples");
    if (trace != nullptr) {
        trace->mode = mode;
        trace->inputs.assign(net.layers.size(), Tensor{});
        trace->bn_xhat.assign(net.layers.size(), Tensor{});
        trace->bn_mean.assign(net.layers.size(), {});
        trace->bn_var.assign(net.layers.size(), {});
    }
    Tensor cur = batch;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        if (trace != nullptr) trace->inputs[i] = cur;
        if (const auto* d = std::get_if<DenseLayer>(&net.layers[i])) {
            cur = dense_forward(*d, cur);
        } else if (const auto* bn = std::get_if<BatchNormLayer>(&net.layers[i])) {
            BatchNormLayer* sink = nullptr;
            if (mode == Mode::train && stats_sink != nullptr)
                sink = &std::get<BatchNormLayer>(stats_sink->layers[i]);
            cur = bn_forward(*bn, cur, mode, sink, trace, i);
        } else {
            for (auto& v : cur.values) v = v > 0.0 ? v : 0.0;
        }
    }
    if (cur.cols() != net.head_width)
        throw DimensionError("forward produced head width " + std::to_string(cur.cols()));
    require_finite(cur, "forward logits");
    return cur;
}

}  // namespace detail

// Train-mode forward updates batch-norm running statistics in place.
inline Logits forward(Network& net, const Tensor& batch, Mode mode) {
    return detail::forward_core(net, batch, mode, nullptr, mode == Mode::train ? &net : nullptr);
}

// Eval-mode forward; mutates nothing, safe on shared snapshots.
inline Logits forward(const Network& net, const Tensor& batch) {
    return detail::forward_core(net, batch, Mode::eval, nullptr, nullptr);
}

// Forward that records everything backward() needs. Running statistics are
// still updated in train mode, matching plain forward().
inline Logits forward_traced(Network& net, const Tensor& batch, Mode mode, ForwardTrace& trace) {
    return detail::forward_core(net, batch, mode, &trace, mode == Mode::train ? &net : nullptr);
}

// Backprop from dL/dlogits to every trainable array. Frozen dense weights get
// zero gradient. Order matches param_views().
inline GradientSet backward(const Network& net, const ForwardTrace& trace, const Tensor& dlogits) {
    GradientSet grads;
    grads.resize(param_views(const_cast<Network&>(net)).size());
    std::size_t gi = grads.size();
    Tensor delta = dlogits;
    for (std::size_t ri = net.layers.size(); ri-- > 0;) {
        const Layer& layer = net.layers[ri];
        if (const auto* d = std::get_if<DenseLayer>(&layer)) {
            const Tensor& x = trace.inputs[ri];
            std::vector<double> gw(d->w.size(), 0.0), gb(d->out, 0.0);
            Tensor dx(x.rows(), d->in);
            for (std::size_t r = 0; r < x.rows(); ++r) {
                const double* xr = x.row(r);
                const double* dr = delta.row(r);
                double* dxr = dx.row(r);
                for (std::size_t o = 0; o < d->out; ++o) {
                    const double g = dr[o];
                    gb[o] += g;
                    double* gwrow = gw.data() + o * d->in;
                    const double* wrow = d->w.data() + o * d->in;
                    for (std::size_t i = 0; i < d->in; ++i) {
                        gwrow[i] += g * xr[i];
                        dxr[i] += g * wrow[i];
                    }
                }
            }
            if (!d->live.empty())
                for (std::size_t k = 0; k < gw.size(); ++k)
                    if (d->live[k] == 0) gw[k] = 0.0;
            grads[--gi] = std::move(gb);
            grads[--gi] = std::move(gw);
            delta = std::move(dx);
        } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
            const std::size_t n = delta.rows(), w = bn->width;
            const Tensor& xhat = trace.bn_xhat[ri];
            std::vector<double> gscale(w, 0.0), gshift(w, 0.0);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < w; ++j) {
                    gscale[j] += delta.at(r, j) * xhat.at(r, j);
                    gshift[j] += delta.at(r, j);
                }
            Tensor dx(n, w);
            if (trace.mode == Mode::eval) {
                for (std::size_t j = 0; j < w; ++j) {
                    const double inv = 1.0 / std::sqrt(bn->running_var[j] + bn->eps);
                    for (std::size_t r = 0; r < n; ++r)
                        dx.at(r, j) = delta.at(r, j) * bn->scale[j] * inv;
                }
            } else {
                // full batch-norm backward: batch statistics depend on x
                const auto& var = trace.bn_var[ri];
                const double dn = static_cast<double>(n);
                for (std::size_t j = 0; j < w; ++j) {
                    const double inv = 1.0 / std::sqrt(var[j] + bn->eps);
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (std::size_t r = 0; r < n; ++r) {
                        const double dxh = delta.at(r, j) * bn->scale[j];
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xhat.at(r, j);
                    }
                    for (std::size_t r = 0; r < n; ++r) {
                        const double dxh = delta.at(r, j) * bn->scale[j];
                        dx.at(r, j) = inv / dn * (dn * dxh - sum_dxhat - xhat.at(r, j) * sum_dxhat_xhat);
                    }
                }
            }
            grads[--gi] = std::move(gshift);
            grads[--gi] = std::move(gscale);
            delta = std::move(dx);
        } else {
            const Tensor& x = trace.inputs[ri];
            for (std::size_t k = 0; k < delta.values.size(); ++k)
                if (x.values[k] <= 0.0) delta.values[k] = 0.0;
        }
    }
    return grads;
}

// MLP factory: Dense -> BatchNorm -> ReLU per hidden width, dense head.
// He-normal weights, zero biases, identity batch-norm.
inline Network make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                        std::size_t num_classes, Rng& rng, bool with_bn = true) {
    if (input_dim == 0 || num_classes == 0) throw ParameterError("make_mlp: zero width");
    Network net;
    net.input_width = input_dim;
    net.head_width = num_classes;
    std::size_t prev = input_dim;
    auto add_dense = [&](std::size_t out) {
        DenseLayer d;
        d.in = prev;
        d.out = out;
        d.w.resize(prev * out);
        d.b.assign(out, 0.0);
        const double std = std::sqrt(2.0 / static_cast<double>(prev));
        for (auto& v : d.w) v = rng.normal(0.0, std);
        net.layers.emplace_back(std::move(d));
        prev = out;
    };
    for (std::size_t h : hidden) {
        add_dense(h);
        if (with_bn) {
            BatchNormLayer bn;
            bn.width = h;
            bn.scale.assign(h, 1.0);
            bn.shift.assign(h, 0.0);
            bn.running_mean.assign(h, 0.0);
            bn.running_var.assign(h, 1.0);
            net.layers.emplace_back(std::move(bn));
        }
        net.layers.emplace_back(ReluLayer{});
    }
    add_dense(num_classes);
    net.validate();
    return net;
}

}  // namespace pfedsim
