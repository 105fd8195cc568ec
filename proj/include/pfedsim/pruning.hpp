#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "pfedsim/errors.hpp"
#include "pfedsim/network.hpp"

namespace pfedsim {

// Binary mask over the reference architecture's prunable-unit index space.
// bit = 1 means the unit is retained. Channel masks index hidden units,
// magnitude masks index individual dense weights; one experiment uses exactly
// one of the two, so all masks it compares have the same length.
struct PruneMask {
    std::vector<std::uint8_t> bits;

    std::size_t size() const { return bits.size(); }
    std::size_t retained_count() const {
        std::size_t n = 0;
        for (auto b : bits) n += (b != 0);
        return n;
    }
    bool operator==(const PruneMask& other) const { return bits == other.bits; }
};

// Maps each pruned-model hidden unit back to its reference coordinate.
// Group g covers the outputs of the g-th non-head dense layer; retained[g]
// lists the surviving reference indices (local to the group, strictly
// increasing). reference_widths pins the group widths of the reference net.
struct ArchDescriptor {
    std::vector<std::size_t> reference_widths;
    std::vector<std::vector<std::size_t>> retained;

    std::size_t reference_total() const {
        return std::accumulate(reference_widths.begin(), reference_widths.end(), std::size_t{0});
    }
    bool operator==(const ArchDescriptor& other) const {
        return reference_widths == other.reference_widths && retained == other.retained;
    }
};

namespace detail {

// A prunable group: one hidden dense layer, its optional batch-norm, and the
// downstream dense layer consuming its outputs.
struct PrunableGroup {
    std::size_t dense_idx = 0;
    std::size_t bn_idx = static_cast<std::size_t>(-1);
    std::size_t next_dense_idx = 0;
    std::size_t width = 0;

    bool has_bn() const { return bn_idx != static_cast<std::size_t>(-1); }
};

inline std::vector<PrunableGroup> prunable_groups(const Network& net) {
    std::vector<PrunableGroup> groups;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto* d = std::get_if<DenseLayer>(&net.layers[i]);
        if (d == nullptr) continue;
        PrunableGroup g;
        g.dense_idx = i;
        g.width = d->out;
        bool found_next = false;
        for (std::size_t j = i + 1; j < net.layers.size(); ++j) {
            if (const auto* bn = std::get_if<BatchNormLayer>(&net.layers[j])) {
                if (!found_next && bn->width == d->out && !g.has_bn()) g.bn_idx = j;
            } else if (std::holds_alternative<DenseLayer>(net.layers[j])) {
                g.next_dense_idx = j;
                found_next = true;
                break;
            }
        }
        if (found_next) groups.push_back(g);  // the head dense has no consumer: not prunable
    }
    return groups;
}

template <typename T>
std::vector<T> slice(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(v[i]);
    return out;
}

// Rebuilds the network keeping only keep[g] (local indices, sorted) of each
// prunable group's units.
inline Network structural_prune(const Network& net,
                                const std::vector<std::vector<std::size_t>>& keep) {
    const auto groups = prunable_groups(net);
    PFEDSIM_CHECK(groups.size() == keep.size(), "structural_prune: keep-list arity");
    Network out = net;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& grp = groups[g];
        const auto& kept = keep[g];
        if (kept.empty())
            throw PruningFloorError("pruning would empty hidden layer " + std::to_string(g));
        auto& d = std::get<DenseLayer>(out.layers[grp.dense_idx]);
        // rows of the producing dense
        std::vector<double> w;
        std::vector<std::uint8_t> live;
        w.reserve(kept.size() * d.in);
        for (auto r : kept) {
            w.insert(w.end(), d.w.begin() + r * d.in, d.w.begin() + (r + 1) * d.in);
            if (!d.live.empty())
                live.insert(live.end(), d.live.begin() + r * d.in, d.live.begin() + (r + 1) * d.in);
        }
        d.w = std::move(w);
        d.live = std::move(live);
        d.b = slice(d.b, kept);
        d.out = kept.size();
        if (grp.has_bn()) {
            auto& bn = std::get<BatchNormLayer>(out.layers[grp.bn_idx]);
            bn.scale = slice(bn.scale, kept);
            bn.shift = slice(bn.shift, kept);
            bn.running_mean = slice(bn.running_mean, kept);
            bn.running_var = slice(bn.running_var, kept);
            bn.width = kept.size();
        }
        // columns of the consuming dense
        auto& nd = std::get<DenseLayer>(out.layers[grp.next_dense_idx]);
        std::vector<double> nw;
        std::vector<std::uint8_t> nlive;
        nw.reserve(nd.out * kept.size());
        for (std::size_t o = 0; o < nd.out; ++o) {
            for (auto c : kept) {
                nw.push_back(nd.w[o * nd.in + c]);
                if (!nd.live.empty()) nlive.push_back(nd.live[o * nd.in + c]);
            }
        }
        nd.w = std::move(nw);
        nd.live = std::move(nlive);
        nd.in = kept.size();
    }
    out.validate();
    return out;
}

}  // namespace detail

// Descriptor for an unpruned network: every group fully retained.
inline ArchDescriptor full_descriptor(const Network& reference) {
    ArchDescriptor desc;
    for (const auto& g : detail::prunable_groups(reference)) {
        desc.reference_widths.push_back(g.width);
        std::vector<std::size_t> all(g.width);
        std::iota(all.begin(), all.end(), std::size_t{0});
        desc.retained.push_back(std::move(all));
    }
    return desc;
}

// Bit vector over the reference unit space with 1 at every retained index.
inline PruneMask extract_mask(const ArchDescriptor& descriptor, std::size_t reference_total) {
    if (descriptor.reference_total() != reference_total)
        throw DescriptorError("extract_mask: descriptor covers " +
                              std::to_string(descriptor.reference_total()) + " units, expected " +
                              std::to_string(reference_total));
    if (descriptor.retained.size() != descriptor.reference_widths.size())
        throw DescriptorError("extract_mask: group arity mismatch");
    PruneMask mask;
    mask.bits.assign(reference_total, 0);
    std::size_t offset = 0;
    for (std::size_t g = 0; g < descriptor.retained.size(); ++g) {
        std::size_t prev = 0;
        bool first = true;
        for (auto idx : descriptor.retained[g]) {
            if (idx >= descriptor.reference_widths[g])
                throw DescriptorError("extract_mask: index " + std::to_string(idx) +
                                      " out of range in group " + std::to_string(g));
            if (!first && idx <= prev)
                throw DescriptorError("extract_mask: indices not strictly increasing in group " +
                                      std::to_string(g));
            mask.bits[offset + idx] = 1;
            prev = idx;
            first = false;
        }
        offset += descriptor.reference_widths[g];
    }
    return mask;
}

// Trainable scalar parameters; magnitude-frozen weights are excluded.
inline std::size_t param_count(const Network& net) {
    std::size_t n = 0;
    for (const auto& layer : net.layers) {
        if (const auto* d = std::get_if<DenseLayer>(&layer)) {
            n += d->live_weight_count() + d->b.size();
        } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
            n += bn->scale.size() + bn->shift.size();
        }
    }
    return n;
}

struct ChannelPruneResult {
    Network net;
    PruneMask mask;
    ArchDescriptor descriptor;
};

// Structured channel pruning: rank all prunable units by |batch-norm scale|
// ascending across layers, drop the floor(gamma * U) smallest, rebuild the
// dense layers around them. Ties break toward the lower reference index. The
// result's mask and descriptor are in reference coordinates; `current` is the
// descriptor of `net` itself (full_descriptor for an unpruned reference).
inline ChannelPruneResult channel_prune(const Network& net, double gamma,
                                        const ArchDescriptor& current) {
    if (gamma < 0.0 || gamma >= 1.0)
        throw ParameterError("channel_prune: gamma must lie in [0,1)");
    const auto groups = detail::prunable_groups(net);
    if (groups.empty()) throw ParameterError("channel_prune: network has no prunable layer");
    if (groups.size() != current.retained.size())
        throw DescriptorError("channel_prune: descriptor does not match network");

    struct Unit {
        double key;
        std::size_t group, local, ref;
    };
    std::vector<Unit> units;
    std::size_t ref_offset_check = 0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (current.retained[g].size() != groups[g].width)
            throw DescriptorError("channel_prune: descriptor width mismatch in group " +
                                  std::to_string(g));
        if (!groups[g].has_bn())
            throw ParameterError("channel_prune: hidden layer " + std::to_string(g) +
                                 " has no batch-norm to rank by");
        const auto& bn = std::get<BatchNormLayer>(net.layers[groups[g].bn_idx]);
        for (std::size_t j = 0; j < groups[g].width; ++j)
            units.push_back({std::abs(bn.scale[j]), g, j, ref_offset_check + current.retained[g][j]});
        ref_offset_check += current.reference_widths[g];
    }

    const std::size_t remove = static_cast<std::size_t>(gamma * static_cast<double>(units.size()));
    std::sort(units.begin(), units.end(), [](const Unit& a, const Unit& b) {
        return a.key != b.key ? a.key < b.key : a.ref < b.ref;
    });

    std::vector<std::vector<std::uint8_t>> keep_flag(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) keep_flag[g].assign(groups[g].width, 1);
    for (std::size_t i = 0; i < remove; ++i) keep_flag[units[i].group][units[i].local] = 0;

    std::vector<std::vector<std::size_t>> keep_local(groups.size());
    ArchDescriptor next;
    next.reference_widths = current.reference_widths;
    next.retained.resize(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
        for (std::size_t j = 0; j < groups[g].width; ++j) {
            if (keep_flag[g][j] != 0) {
                keep_local[g].push_back(j);
                next.retained[g].push_back(current.retained[g][j]);
            }
        }
        if (keep_local[g].empty())
            throw PruningFloorError("channel_prune: gamma=" + std::to_string(gamma) +
                                    " empties hidden layer " + std::to_string(g));
    }

    ChannelPruneResult result;
    result.net = detail::structural_prune(net, keep_local);
    result.descriptor = std::move(next);
    result.mask = extract_mask(result.descriptor, current.reference_total());
    return result;
}

struct MagnitudePruneResult {
    Network net;
    PruneMask mask;
};

// Unstructured pruning: per dense layer, zero and freeze the
// floor(gamma * n_live) smallest-magnitude live weights. Shape is unchanged;
// frozen weights drop out of gradient updates and parameter counts. The mask
// indexes every dense weight slot of the (shape-identical) reference,
// layer-major and row-major, with 1 = still live.
inline MagnitudePruneResult magnitude_prune(const Network& net, double gamma) {
    if (gamma < 0.0 || gamma >= 1.0)
        throw ParameterError("magnitude_prune: gamma must lie in [0,1)");
    MagnitudePruneResult result;
    result.net = net;
    for (auto& layer : result.net.layers) {
        auto* d = std::get_if<DenseLayer>(&layer);
        if (d == nullptr) continue;
        if (d->live.empty()) d->live.assign(d->w.size(), 1);
        struct Slot {
            double key;
            std::size_t idx;
        };
        std::vector<Slot> livew;
        for (std::size_t k = 0; k < d->w.size(); ++k)
            if (d->live[k] != 0) livew.push_back({std::abs(d->w[k]), k});
        const std::size_t zap = static_cast<std::size_t>(gamma * static_cast<double>(livew.size()));
        std::sort(livew.begin(), livew.end(), [](const Slot& a, const Slot& b) {
            return a.key != b.key ? a.key < b.key : a.idx < b.idx;
        });
        for (std::size_t i = 0; i < zap; ++i) {
            d->w[livew[i].idx] = 0.0;
            d->live[livew[i].idx] = 0;
        }
        for (auto b : d->live) result.mask.bits.push_back(b);
    }
    return result;
}

// Embeds a channel-pruned network back into the reference shape, retained
// parameters copied, pruned slots zero. Pruned batch-norm slots get neutral
// statistics (mean 0, variance 1) to honor the positivity invariant. Used by
// the zero-fill-average aggregation mode.
inline Network zero_fill_embed(const Network& net, const ArchDescriptor& descriptor,
                               const Network& reference_arch) {
    const auto groups = detail::prunable_groups(net);
    const auto ref_groups = detail::prunable_groups(reference_arch);
    if (groups.size() != ref_groups.size() || groups.size() != descriptor.retained.size())
        throw DescriptorError("zero_fill_embed: group arity mismatch");
    if (net.layers.size() != reference_arch.layers.size())
        throw DescriptorError("zero_fill_embed: layer stack mismatch");
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (descriptor.retained[g].size() != groups[g].width ||
            descriptor.reference_widths[g] != ref_groups[g].width)
            throw DescriptorError("zero_fill_embed: descriptor inconsistent with networks in group " +
                                  std::to_string(g));
        for (auto idx : descriptor.retained[g])
            if (idx >= ref_groups[g].width)
                throw DescriptorError("zero_fill_embed: retained index out of range");
    }

    Network out = reference_arch;
    // zero all trainable parameters, neutralize batch-norm stats
    for (auto& layer : out.layers) {
        if (auto* d = std::get_if<DenseLayer>(&layer)) {
            std::fill(d->w.begin(), d->w.end(), 0.0);
            std::fill(d->b.begin(), d->b.end(), 0.0);
            d->live.clear();
        } else if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
            std::fill(bn->scale.begin(), bn->scale.end(), 0.0);
            std::fill(bn->shift.begin(), bn->shift.end(), 0.0);
            std::fill(bn->running_mean.begin(), bn->running_mean.end(), 0.0);
            std::fill(bn->running_var.begin(), bn->running_var.end(), 1.0);
        }
    }

    // map each layer's rows/cols through the surrounding groups
    auto row_map_of = [&](std::size_t layer_idx) -> const std::vector<std::size_t>* {
        for (std::size_t g = 0; g < groups.size(); ++g)
            if (groups[g].dense_idx == layer_idx) return &descriptor.retained[g];
        return nullptr;  // head dense: rows are classes, never pruned
    };
    auto col_map_of = [&](std::size_t layer_idx) -> const std::vector<std::size_t>* {
        for (std::size_t g = 0; g < groups.size(); ++g)
            if (groups[g].next_dense_idx == layer_idx) return &descriptor.retained[g];
        return nullptr;  // first dense: cols are input features, never pruned
    };

    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        if (const auto* d = std::get_if<DenseLayer>(&net.layers[i])) {
            auto& od = std::get<DenseLayer>(out.layers[i]);
            const auto* rows = row_map_of(i);
            const auto* cols = col_map_of(i);
            if ((rows == nullptr && od.out != d->out) || (cols == nullptr && od.in != d->in))
                throw DescriptorError("zero_fill_embed: unprunable dimension mismatch at layer " +
                                      std::to_string(i));
            for (std::size_t r = 0; r < d->out; ++r) {
                const std::size_t rr = rows != nullptr ? (*rows)[r] : r;
                od.b[rr] = d->b[r];
                for (std::size_t c = 0; c < d->in; ++c) {
                    const std::size_t cc = cols != nullptr ? (*cols)[c] : c;
                    od.w[rr * od.in + cc] = d->w[r * d->in + c];
                }
            }
        } else if (const auto* bn = std::get_if<BatchNormLayer>(&net.layers[i])) {
            auto& obn = std::get<BatchNormLayer>(out.layers[i]);
            obn.momentum = bn->momentum;
            obn.eps = bn->eps;
            const std::vector<std::size_t>* map = nullptr;
            for (std::size_t g = 0; g < groups.size(); ++g)
                if (groups[g].bn_idx == i) map = &descriptor.retained[g];
            for (std::size_t j = 0; j < bn->width; ++j) {
                const std::size_t jj = map != nullptr ? (*map)[j] : j;
                obn.scale[jj] = bn->scale[j];
                obn.shift[jj] = bn->shift[j];
                obn.running_mean[jj] = bn->running_mean[j];
                obn.running_var[jj] = bn->running_var[j];
            }
        }
    }
    out.validate();
    return out;
}

// Elementwise average of same-shape networks over trainable parameters and
// batch-norm statistics. The zero-fill aggregation path feeds this.
inline Network average_networks(const std::vector<Network>& nets) {
    PFEDSIM_CHECK(!nets.empty(), "average_networks: empty input");
    Network out = nets.front();
    auto out_views = param_views(out);
    for (std::size_t n = 1; n < nets.size(); ++n) {
        auto& other = const_cast<Network&>(nets[n]);
        auto views = param_views(other);
        if (views.size() != out_views.size())
            throw ModeViolationError("average_networks: heterogeneous architectures");
        for (std::size_t i = 0; i < views.size(); ++i) {
            if (views[i].values->size() != out_views[i].values->size())
                throw ModeViolationError("average_networks: heterogeneous architectures");
            for (std::size_t k = 0; k < out_views[i].values->size(); ++k)
                (*out_views[i].values)[k] += (*views[i].values)[k];
        }
        for (std::size_t li = 0; li < out.layers.size(); ++li) {
            auto* obn = std::get_if<BatchNormLayer>(&out.layers[li]);
            if (obn == nullptr) continue;
            const auto& bn = std::get<BatchNormLayer>(nets[n].layers[li]);
            for (std::size_t j = 0; j < obn->width; ++j) {
                obn->running_mean[j] += bn.running_mean[j];
                obn->running_var[j] += bn.running_var[j];
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(nets.size());
    for (auto& view : param_views(out))
        for (auto& v : *view.values) v *= inv;
    for (auto& layer : out.layers) {
        auto* bn = std::get_if<BatchNormLayer>(&layer);
        if (bn == nullptr) continue;
        for (auto& v : bn->running_mean) v *= inv;
        for (auto& v : bn->running_var) v *= inv;
    }
    // an averaged model starts a fresh life: no frozen slots
    for (auto& layer : out.layers)
        if (auto* d = std::get_if<DenseLayer>(&layer)) d->live.clear();
    return out;
}

}  // namespace pfedsim
