#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>

#include "subsample_nn/errors.hpp"

namespace snn {

/// Counter-based generator: output i is a pure function of (key, i).
///
/// Streams are derived with split(), so every consumer (policy, layer,
/// epoch) can own an independent sequence that does not depend on how much
/// any other consumer has drawn. Only 64-bit integer arithmetic is used, so
/// the integer stream is identical on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix(seed ^ mix(stream + kStreamSalt))),
        counter_(0)
    {
    }

    /// Independent child generator. Does not advance this generator.
    Rng split(std::uint64_t stream) const {
        Rng child(0);
        child.key_ = mix(key_ ^ mix(stream + kSplitSalt));
        child.counter_ = 0;
        return child;
    }

    std::uint64_t next_u64() {
        ++counter_;
        return mix(key_ + counter_ * kGolden);
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller. Consumes two words per draw.
    double gauss() {
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    bool bernoulli(double p) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ParameterError("bernoulli: p must lie in [0, 1]");
        }
        return uniform() < p;
    }

    /// Uniform integer in [0, n).
    std::size_t uniform_index(std::size_t n) {
        if (n == 0) {
            throw ParameterError("uniform_index: empty range");
        }
        const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
        return static_cast<std::size_t>(wide >> 64);
    }

    /// Index i drawn with probability weights[i] / sum(weights).
    std::size_t choice_weighted(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0) || !std::isfinite(w)) {
                throw ParameterError("choice_weighted: weights must be finite and nonnegative");
            }
            total += w;
        }
        if (!(total > 0.0)) {
            throw ParameterError("choice_weighted: weights sum to zero");
        }
        const double target = uniform() * total;
        double cumulative = 0.0;
        std::size_t last_positive = 0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] <= 0.0) {
                continue;
            }
            cumulative += weights[i];
            last_positive = i;
            if (target < cumulative) {
                return i;
            }
        }
        return last_positive; // rounding at the top end
    }

    /// Fisher-Yates.
    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = uniform_index(i);
            using std::swap;
            swap(items[i - 1], items[j]);
        }
    }

private:
    static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
    static constexpr std::uint64_t kStreamSalt = 0x632be59bd9b4e019ULL;
    static constexpr std::uint64_t kSplitSalt = 0x85157af5ULL;

    // splitmix64 finalizer
    static constexpr std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_;
};

} // namespace snn
