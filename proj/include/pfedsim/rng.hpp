#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "pfedsim/errors.hpp"

namespace pfedsim {

// Deterministic randomness. std::mt19937_64 has a standard-specified output
// sequence, but the std:: distributions do not, so every distribution here is
// hand-rolled on top of the raw 64-bit stream. Two runs with the same seed
// produce identical draws on any platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Unbiased integer in [0, n) via rejection sampling.
    std::uint64_t uniform_below(std::uint64_t n) {
        PFEDSIM_CHECK(n > 0, "uniform_below(0)");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal, Box-Muller. The sine branch is discarded so each call
    // consumes exactly two uniforms.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Gamma(alpha, 1), Marsaglia-Tsang squeeze for alpha >= 1 and the
    // boosting identity gamma(a) = gamma(a+1) * U^{1/a} for alpha < 1.
    double gamma(double alpha) {
        PFEDSIM_CHECK(alpha > 0.0, "gamma alpha must be positive");
        if (alpha < 1.0) {
            double u = uniform();
            while (u <= 0.0) u = uniform();
            return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    // Symmetric Dirichlet over k categories.
    std::vector<double> dirichlet(double alpha, std::size_t k) {
        std::vector<double> p(k);
        double total = 0.0;
        for (auto& v : p) {
            v = gamma(alpha);
            total += v;
        }
        if (total <= 0.0) {  // all draws underflowed; fall back to uniform
            for (auto& v : p) v = 1.0 / static_cast<double>(k);
            return p;
        }
        for (auto& v : p) v /= total;
        return p;
    }

    // Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    // k distinct values from [0, n), in random order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        PFEDSIM_CHECK(k <= n, "sample k > n");
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(uniform_below(n - i));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k);
        return idx;
    }

private:
    std::mt19937_64 eng_;
};

// splitmix64, used to derive independent sub-seeds from (seed, tags...).
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed) { return mix_seed(seed); }

template <typename... Tags>
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, Tags... rest) {
    return derive_seed(mix_seed(seed ^ mix_seed(tag)), rest...);
}

// Stream tags so different protocol stages never share a generator.
namespace rng_tag {
constexpr std::uint64_t data = 0xD474;
constexpr std::uint64_t partition = 0x9A57;
constexpr std::uint64_t model_init = 0x1417;
constexpr std::uint64_t teacher = 0x7EAC;
constexpr std::uint64_t sampling = 0x5A3B;
constexpr std::uint64_t local = 0x10CA;
constexpr std::uint64_t server = 0x53F2;
constexpr std::uint64_t eval = 0xE7A1;
}  // namespace rng_tag

}  // namespace pfedsim
