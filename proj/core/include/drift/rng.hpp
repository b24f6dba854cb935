// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

namespace drift {

/// Deterministic pseudo-random generator used for every stochastic operation
/// in the project (weight init, corruptions, shuffles, synthetic data).
///
/// The generator is SplitMix64 (Steele, Lea, Flood 2014): the state advances
/// by the 64-bit golden-gamma constant and each output is a finalized mix of
/// the state. Gaussian variates come from the Box-Muller transform applied to
/// two consecutive uniform draws. Both are documented in docs/FORMATS.md so
/// runs can be reproduced bit-for-bit from a seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform float in [0, 1), 24 mantissa bits.
    float uniform() {
        return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f;
    }

    /// Uniform double in [0, 1), 53 mantissa bits.
    double uniform_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n); n must be positive.
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Two independent standard-normal variates (Box-Muller).
    /// u1 is shifted into (0, 1] so the log never sees zero.
    std::pair<double, double> gaussian_pair() {
        const double u1 =
            (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = uniform_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        return {r * std::cos(theta), r * std::sin(theta)};
    }

private:
    std::uint64_t state_;
};

/// Per-item seed for corruption streams: base seed XOR item index. The
/// SplitMix64 finalizer decorrelates neighbouring states, so consecutive
/// indices yield independent-looking streams.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    return base ^ index;
}

} // namespace drift
