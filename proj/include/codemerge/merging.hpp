// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "codemerge/errors.hpp"
#include "codemerge/tensor.hpp"

namespace codemerge {

/// Tie handling when positive and negative sign counts are equal.
/// HighestScoreSign adopts the sign of the highest-weight contributor among
/// the nonzero entries at that coordinate (weight ties resolved by smaller
/// step, then positive); Zero merges the coordinate to 0.
enum class SignTieBreak { HighestScoreSign, Zero };

/// Zeros never vote; an all-zero coordinate merges to 0.
/// renormalize_per_coordinate = false reproduces the literal masked weighted
/// sum; true rescales surviving weights to sum to 1 per coordinate, which
/// stops masked coordinates from shrinking toward zero.
struct SignPolicy {
    SignTieBreak tie_break = SignTieBreak::HighestScoreSign;
    bool renormalize_per_coordinate = false;
};

namespace detail {

inline void check_merge_inputs(std::span<const Checkpoint> checkpoints,
                               std::span<const double> weights, bool require_positive) {
    if (checkpoints.empty()) {
        throw ParameterError("merge requires at least one checkpoint");
    }
    if (weights.size() != checkpoints.size()) {
        throw ParameterError("weight count does not match checkpoint count");
    }
    double total = 0.0;
    for (double w : weights) {
        if (!std::isfinite(w)) {
            throw ParameterError("merge weights must be finite");
        }
        if (require_positive && w <= 0.0) {
            throw ParameterError("sign-consistent merge weights must be positive");
        }
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw ParameterError("merge weights must sum to 1 (got " + std::to_string(total) + ")");
    }
    for (const Checkpoint& c : checkpoints.subspan(1)) {
        check_same_structure(checkpoints.front(), c);
    }
}

inline std::uint64_t max_step(std::span<const Checkpoint> checkpoints) {
    std::uint64_t step = 0;
    for (const Checkpoint& c : checkpoints) step = std::max(step, c.step());
    return step;
}

}  // namespace detail

/// Majority-sign-consensus merge: per coordinate, nonzero entries vote on a
/// sign, dissenting entries are masked, and the survivors contribute their
/// weighted values. Weights must be positive and sum to 1.
inline Checkpoint sign_consistent_merge(std::span<const Checkpoint> checkpoints,
                                        std::span<const double> weights,
                                        const SignPolicy& policy = {}) {
    detail::check_merge_inputs(checkpoints, weights, /*require_positive=*/true);
    const Checkpoint& first = checkpoints.front();
    const std::size_t k = checkpoints.size();

    Checkpoint result(detail::max_step(checkpoints));
    std::vector<std::span<const float>> views(k);
    std::vector<float> out;
    for (const auto& [name, tensor] : first) {
        for (std::size_t m = 0; m < k; ++m) {
            views[m] = checkpoints[m].at(name).data();
        }
        const std::size_t n = tensor.data().size();
        out.resize(n);
        for (std::size_t j = 0; j < n; ++j) {
            int positive = 0;
            int negative = 0;
            for (std::size_t m = 0; m < k; ++m) {
                const float v = views[m][j];
                if (v > 0.0f) {
                    ++positive;
                } else if (v < 0.0f) {
                    ++negative;
                }
            }
            int majority;
            if (positive == 0 && negative == 0) {
                out[j] = 0.0f;
                continue;
            } else if (positive > negative) {
                majority = 1;
            } else if (negative > positive) {
                majority = -1;
            } else if (policy.tie_break == SignTieBreak::Zero) {
                out[j] = 0.0f;
                continue;
            } else {
                // Highest weight among nonzero entries; ties by smaller
                // step, then positive. Order-free, so the merge stays
                // permutation invariant.
                double best_weight = -1.0;
                std::uint64_t best_step = 0;
                majority = 1;
                for (std::size_t m = 0; m < k; ++m) {
                    const float v = views[m][j];
                    if (v == 0.0f) continue;
                    const int sign = v > 0.0f ? 1 : -1;
                    const std::uint64_t step = checkpoints[m].step();
                    const bool wins = weights[m] > best_weight ||
                                      (weights[m] == best_weight &&
                                       (step < best_step ||
                                        (step == best_step && sign > majority)));
                    if (wins) {
                        best_weight = weights[m];
                        best_step = step;
                        majority = sign;
                    }
                }
            }
            double sum = 0.0;
            double kept_weight = 0.0;
            for (std::size_t m = 0; m < k; ++m) {
                const float v = views[m][j];
                const int sign = v > 0.0f ? 1 : (v < 0.0f ? -1 : 0);
                if (sign != majority) continue;
                sum += weights[m] * static_cast<double>(v);
                kept_weight += weights[m];
            }
            if (policy.renormalize_per_coordinate && kept_weight > 0.0) {
                sum /= kept_weight;
            }
            out[j] = static_cast<float>(sum);
        }
        result.add(name, Tensor(tensor.dims(), out));
    }
    return result;
}

/// Plain per-coordinate weighted sum. Weights must sum to 1 but may be
/// negative (synergy weights pass through unclamped).
inline Checkpoint weighted_average_merge(std::span<const Checkpoint> checkpoints,
                                         std::span<const double> weights) {
    detail::check_merge_inputs(checkpoints, weights, /*require_positive=*/false);
    const Checkpoint& first = checkpoints.front();
    const std::size_t k = checkpoints.size();

    Checkpoint result(detail::max_step(checkpoints));
    std::vector<float> out;
    for (const auto& [name, tensor] : first) {
        const std::size_t n = tensor.data().size();
        out.assign(n, 0.0f);
        std::vector<double> acc(n, 0.0);
        for (std::size_t m = 0; m < k; ++m) {
            const auto values = checkpoints[m].at(name).data();
            const double w = weights[m];
            for (std::size_t j = 0; j < n; ++j) {
                acc[j] += w * static_cast<double>(values[j]);
            }
        }
        for (std::size_t j = 0; j < n; ++j) out[j] = static_cast<float>(acc[j]);
        result.add(name, Tensor(tensor.dims(), out));
    }
    return result;
}

/// One exponential-moving-average step: beta * prev + (1 - beta) * next.
inline Checkpoint ema_update(const Checkpoint& prev, const Checkpoint& next, double beta) {
    if (!(beta > 0.0 && beta < 1.0)) {
        throw ParameterError("ema beta must lie strictly inside (0,1)");
    }
    detail::check_same_structure(prev, next);
    Checkpoint result(std::max(prev.step(), next.step()));
    std::vector<float> out;
    for (const auto& [name, tensor] : prev) {
        const auto a = tensor.data();
        const auto b = next.at(name).data();
        out.resize(a.size());
        for (std::size_t j = 0; j < a.size(); ++j) {
            out[j] = static_cast<float>(beta * static_cast<double>(a[j]) +
                                        (1.0 - beta) * static_cast<double>(b[j]));
        }
        result.add(name, Tensor(tensor.dims(), out));
    }
    return result;
}

}  // namespace codemerge
