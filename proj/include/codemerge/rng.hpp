// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>

namespace codemerge {

/// SplitMix64: a 64-bit counter-based generator (Steele, Lea & Flood 2014).
/// The state advances by the golden-gamma constant and each output is a
/// finalized mix of the counter, so the k-th output is a pure function of
/// (seed, k). Chosen over std::mt19937_64 + std::normal_distribution because
/// the standard leaves distribution algorithms implementation-defined; this
/// generator produces identical sequences on every conforming platform.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform double in (0, 1]; the +1 keeps log() finite in Box-Muller.
    double next_unit() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

private:
    std::uint64_t state_;
};

/// Standard Gaussian sampler: SplitMix64 uniforms through the Box-Muller
/// transform. Draws two uniforms per pair of normals; the second normal of
/// each pair is cached. Consumption order is part of the format contract for
/// everything seeded (projection matrices, streams, extractors).
class GaussianSampler {
public:
    explicit GaussianSampler(std::uint64_t seed) : rng_(seed) {}

    double next() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = rng_.next_unit();
        const double u2 = rng_.next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = kTwoPi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    /// Access to the underlying uniform stream (shares state with next()).
    double next_unit() { return rng_.next_unit(); }
    std::uint64_t next_u64() { return rng_.next_u64(); }

private:
    static constexpr double kTwoPi = 6.283185307179586476925286766559;

    SplitMix64 rng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace codemerge
