// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>

#include "codemerge/errors.hpp"

namespace codemerge {

/// Sample Pearson correlation. Returns 0 when either input has zero
/// variance; callers that care can detect that case via pearson_degenerate.
inline double pearson_correlation(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw ParameterError("pearson requires two aligned samples of length >= 2");
    }
    const double n = static_cast<double>(a.size());
    double mean_a = 0.0;
    double mean_b = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        mean_a += a[i];
        mean_b += b[i];
    }
    mean_a /= n;
    mean_b /= n;
    double cov = 0.0;
    double var_a = 0.0;
    double var_b = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - mean_a;
        const double db = b[i] - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if (var_a == 0.0 || var_b == 0.0) return 0.0;
    return cov / std::sqrt(var_a * var_b);
}

inline bool pearson_degenerate(std::span<const double> a) {
    for (std::size_t i = 1; i < a.size(); ++i) {
        if (a[i] != a[0]) return false;
    }
    return true;
}

/// Kendall tau-a by explicit O(n^2) pair counting: (concordant -
/// discordant) / (n(n-1)/2). Tied pairs in either variable contribute 0.
inline double kendall_tau(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw ParameterError("kendall requires two aligned samples of length >= 2");
    }
    long long net = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = i + 1; j < a.size(); ++j) {
            const double da = a[i] - a[j];
            const double db = b[i] - b[j];
            if (da == 0.0 || db == 0.0) continue;
            net += (da > 0.0) == (db > 0.0) ? 1 : -1;
        }
    }
    const double pairs = static_cast<double>(a.size()) * (static_cast<double>(a.size()) - 1.0) / 2.0;
    return static_cast<double>(net) / pairs;
}

}  // namespace codemerge
