// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "codemerge/errors.hpp"
#include "codemerge/rng.hpp"
#include "codemerge/tensor.hpp"

namespace codemerge {

/// Compact projection of a feature vector, keyed by the adaptation step that
/// produced it.
struct Fingerprint {
    std::uint64_t step = 0;
    std::vector<float> values;
};

/// Fixed Gaussian random projection R^d -> R^{d'}. Entries are i.i.d.
/// N(0, 1/d') so the map is approximately norm-preserving, making fingerprint
/// distances comparable across output dimensions. Entries are generated
/// row-major from GaussianSampler(seed) (SplitMix64 + Box-Muller, see
/// rng.hpp), so the matrix is a pure function of (d, d', seed).
class ProjectionMatrix {
public:
    ProjectionMatrix(std::size_t d, std::size_t d_prime, std::uint64_t seed)
        : d_(d), d_prime_(d_prime), seed_(seed) {
        if (d == 0 || d_prime == 0) {
            throw ParameterError("projection dims must be positive");
        }
        if (d_prime > d) {
            throw ParameterError("projection output dim " + std::to_string(d_prime) +
                                 " exceeds input dim " + std::to_string(d));
        }
        const double scale = 1.0 / std::sqrt(static_cast<double>(d_prime));
        GaussianSampler gaussian(seed);
        entries_.resize(d * d_prime);
        for (float& e : entries_) {
            e = static_cast<float>(gaussian.next() * scale);
        }
    }

    std::size_t input_dim() const { return d_; }
    std::size_t output_dim() const { return d_prime_; }
    std::uint64_t seed() const { return seed_; }

    /// Row i: the image of the i-th input basis vector.
    std::span<const float> row(std::size_t i) const {
        return std::span<const float>(entries_).subspan(i * d_prime_, d_prime_);
    }

    std::span<const float> entries() const { return entries_; }

private:
    std::size_t d_;
    std::size_t d_prime_;
    std::uint64_t seed_;
    std::vector<float> entries_;  // row-major d x d'
};

inline ProjectionMatrix make_projection(std::size_t d, std::size_t d_prime, std::uint64_t seed) {
    return ProjectionMatrix(d, d_prime, seed);
}

/// Mean over all leading (batch/spatial/instance) dimensions, leaving a
/// vector over the trailing channel dimension. A rank-1 input is returned
/// unchanged.
inline std::vector<float> pool_features(const Tensor& feature_map) {
    if (feature_map.rank() < 1) {
        throw ParameterError("pool_features requires rank >= 1");
    }
    const std::size_t d = static_cast<std::size_t>(feature_map.dims().back());
    const std::size_t lead = static_cast<std::size_t>(feature_map.size()) / d;
    const auto data = feature_map.data();
    std::vector<double> acc(d, 0.0);
    for (std::size_t i = 0; i < lead; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            acc[j] += static_cast<double>(data[i * d + j]);
        }
    }
    std::vector<float> out(d);
    for (std::size_t j = 0; j < d; ++j) {
        out[j] = static_cast<float>(acc[j] / static_cast<double>(lead));
    }
    return out;
}

/// features^T * entries, accumulated in double. Pure function of its inputs.
inline Fingerprint compute_fingerprint(std::span<const float> features,
                                       const ProjectionMatrix& projection,
                                       std::uint64_t step) {
    if (features.size() != projection.input_dim()) {
        throw ParameterError("feature length " + std::to_string(features.size()) +
                             " does not match projection input dim " +
                             std::to_string(projection.input_dim()));
    }
    const std::size_t d_prime = projection.output_dim();
    std::vector<double> acc(d_prime, 0.0);
    for (std::size_t i = 0; i < features.size(); ++i) {
        const double f = static_cast<double>(features[i]);
        if (f == 0.0) continue;
        const auto row = projection.row(i);
        for (std::size_t j = 0; j < d_prime; ++j) {
            acc[j] += f * static_cast<double>(row[j]);
        }
    }
    Fingerprint fp;
    fp.step = step;
    fp.values.resize(d_prime);
    for (std::size_t j = 0; j < d_prime; ++j) {
        if (!std::isfinite(acc[j])) {
            throw NumericalError("non-finite fingerprint value at index " + std::to_string(j));
        }
        fp.values[j] = static_cast<float>(acc[j]);
    }
    return fp;
}

inline double fingerprint_norm(const Fingerprint& fp) {
    double s = 0.0;
    for (float v : fp.values) s += static_cast<double>(v) * v;
    return std::sqrt(s);
}

}  // namespace codemerge
