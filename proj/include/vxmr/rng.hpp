#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include "vxmr/error.hpp"

namespace vxmr {

// All randomness in the pipeline flows from one root seed through named
// substreams, so any stage can be recomputed in isolation and stages can
// run in any order without perturbing each other.

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

inline std::uint64_t fnv1a(std::uint64_t h, const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Seed for the substream identified by (name, a, b) under a root seed.
inline std::uint64_t stream_seed(std::uint64_t root, std::string_view name,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = fnv1a(kFnvOffset, &root, sizeof(root));
    h = fnv1a(h, name.data(), name.size());
    h = fnv1a(h, &a, sizeof(a));
    h = fnv1a(h, &b, sizeof(b));
    return splitmix64(h);
}

// Deterministic generator with explicitly implemented distributions.
// std::*_distribution sequences are implementation-defined, so they are
// avoided; every draw below is pinned down by the mt19937_64 bit stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform double in [0, 1).
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] inclusive, rejection-sampled (unbiased).
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        if (hi < lo) throw_numeric("uniform_int: empty range");
        std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<std::int64_t>(eng_());  // full 64-bit range
        std::uint64_t limit = std::uint64_t(-1) - (std::uint64_t(-1) % span);
        std::uint64_t v;
        do {
            v = eng_();
        } while (v >= limit);
        return lo + static_cast<std::int64_t>(v % span);
    }

    /// Standard normal via Box-Muller.
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Poisson sample. Knuth multiplication for small means, Hormann's
    /// PTRS transformed rejection for large ones.
    std::int64_t poisson(double mean) {
        if (!(mean >= 0.0)) throw_numeric("poisson: mean must be >= 0");
        if (mean == 0.0) return 0;
        if (mean < 10.0) return poisson_knuth(mean);
        return poisson_ptrs(mean);
    }

private:
    std::int64_t poisson_knuth(double mean) {
        double limit = std::exp(-mean);
        double prod = uniform();
        std::int64_t n = 0;
        while (prod > limit) {
            ++n;
            prod *= uniform();
        }
        return n;
    }

    std::int64_t poisson_ptrs(double mean) {
        const double slam = std::sqrt(mean);
        const double loglam = std::log(mean);
        const double b = 0.931 + 2.53 * slam;
        const double a = -0.059 + 0.02483 * b;
        const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        const double vr = 0.9277 - 3.6224 / (b - 2.0);
        for (;;) {
            double u = uniform() - 0.5;
            double v = uniform();
            double us = 0.5 - std::abs(u);
            auto k = static_cast<std::int64_t>(std::floor((2.0 * a / us + b) * u + mean + 0.43));
            if (us >= 0.07 && v <= vr) return k;
            if (k < 0 || (us < 0.013 && v > us)) continue;
            if (std::log(v) + std::log(inv_alpha) - std::log(a / (us * us) + b) <=
                static_cast<double>(k) * loglam - mean - std::lgamma(static_cast<double>(k) + 1.0)) {
                return k;
            }
        }
    }

    std::mt19937_64 eng_;
};

}  // namespace vxmr
