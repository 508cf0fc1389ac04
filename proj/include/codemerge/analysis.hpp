// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "codemerge/codebook.hpp"
#include "codemerge/errors.hpp"
#include "codemerge/scoring.hpp"
#include "codemerge/stats.hpp"
#include "codemerge/tensor.hpp"

namespace codemerge {

struct LmcReport {
    /// max over the grid of loss(mix) - linear interpolation of endpoints.
    double max_deviation = 0.0;
    /// (lambda, loss) sample points along the path.
    std::vector<std::pair<double, double>> curve;
};

/// Evaluates the loss along the linear path (1-lambda) a + lambda b on a
/// uniform grid and reports the worst deviation from the linear
/// interpolation of the endpoint losses. Near-zero deviation is the linear
/// mode connectivity property; convex losses give deviation <= 0.
inline LmcReport lmc_barrier(const Checkpoint& a, const Checkpoint& b,
                             const std::function<double(const Checkpoint&)>& loss_fn,
                             int grid_points) {
    if (grid_points < 3) {
        throw ParameterError("lmc_barrier requires grid_points >= 3");
    }
    detail::check_same_structure(a, b);
    const double loss_a = loss_fn(a);
    const double loss_b = loss_fn(b);
    LmcReport report;
    report.max_deviation = -std::numeric_limits<double>::infinity();
    report.curve.reserve(static_cast<std::size_t>(grid_points));
    const std::vector<Checkpoint> endpoints = {a, b};
    for (int j = 0; j < grid_points; ++j) {
        const double lambda = static_cast<double>(j) / static_cast<double>(grid_points - 1);
        double loss;
        if (j == 0) {
            loss = loss_a;
        } else if (j == grid_points - 1) {
            loss = loss_b;
        } else {
            const std::vector<double> coeffs = {1.0 - lambda, lambda};
            loss = loss_fn(checkpoint_linear_combination(endpoints, coeffs));
        }
        report.curve.emplace_back(lambda, loss);
        const double deviation = loss - ((1.0 - lambda) * loss_a + lambda * loss_b);
        report.max_deviation = std::max(report.max_deviation, deviation);
    }
    return report;
}

/// Verifies the curvature link z_i^T H^{-1} z_i = s_i / 2 with
/// H = 2 (Z^T Z / n + lambda I): the left side via an explicit Hessian and
/// LDLT solves, the right side via ridge_leverage_scores. Returns the max
/// relative error over rows.
inline double hessian_rls_check(const Eigen::MatrixXd& z, double lambda) {
    if (z.rows() < 1 || z.cols() < 1) {
        throw ParameterError("hessian_rls_check requires a non-empty matrix");
    }
    if (!z.allFinite()) {
        throw ParameterError("hessian_rls_check requires finite values");
    }
    if (!(lambda > 0.0) || !std::isfinite(lambda)) {
        throw ParameterError("lambda must be positive and finite");
    }
    const Eigen::Index n = z.rows();
    const Eigen::Index d = z.cols();
    Eigen::MatrixXd hessian = 2.0 * (z.transpose() * z) / static_cast<double>(n);
    hessian.diagonal().array() += 2.0 * lambda;
    const auto solver = hessian.ldlt();

    ScoringConfig cfg;
    cfg.lambda = lambda;
    cfg.divisor_mode = CovarianceDivisor::RowCount;
    const auto scores = ridge_leverage_scores(z, cfg);

    double max_rel = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::VectorXd zi = z.row(i).transpose();
        const double lhs = zi.dot(solver.solve(zi));
        const double rhs = scores[static_cast<std::size_t>(i)] / 2.0;
        const double denom = std::max(std::abs(rhs), 1e-300);
        max_rel = std::max(max_rel, std::abs(lhs - rhs) / denom);
    }
    (void)d;
    return max_rel;
}

struct CorrelationReport {
    double pearson_r = 0.0;
    double kendall_tau = 0.0;
    /// (fingerprint distance, weight distance) per unordered entry pair.
    std::vector<std::pair<double, double>> pairs;
    /// True when either distance family has zero variance; correlations are
    /// reported as 0 in that case.
    bool degenerate = false;
};

/// For every unordered pair of codebook entries, pairs the fingerprint
/// distance ||z_i - z_j|| with the flattened weight distance
/// ||theta_i - theta_j|| and reports Pearson and Kendall correlations.
inline CorrelationReport fingerprint_weight_correlation(const Codebook& cb) {
    const auto entries = cb.snapshot();
    if (entries.size() < 3) {
        throw StateError("correlation requires at least 3 codebook entries");
    }
    std::vector<std::vector<float>> flats;
    flats.reserve(entries.size());
    Checkpoint reference = cb.resolve(entries.front());
    flats.push_back(flatten(reference));
    for (std::size_t i = 1; i < entries.size(); ++i) {
        const Checkpoint c = cb.resolve(entries[i]);
        detail::check_same_structure(reference, c);
        flats.push_back(flatten(c));
    }

    CorrelationReport report;
    std::vector<double> fp_dist;
    std::vector<double> weight_dist;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        for (std::size_t j = i + 1; j < entries.size(); ++j) {
            const auto& zi = entries[i].fingerprint.values;
            const auto& zj = entries[j].fingerprint.values;
            double a = 0.0;
            for (std::size_t k = 0; k < zi.size(); ++k) {
                const double diff = static_cast<double>(zi[k]) - static_cast<double>(zj[k]);
                a += diff * diff;
            }
            double b = 0.0;
            for (std::size_t k = 0; k < flats[i].size(); ++k) {
                const double diff =
                    static_cast<double>(flats[i][k]) - static_cast<double>(flats[j][k]);
                b += diff * diff;
            }
            fp_dist.push_back(std::sqrt(a));
            weight_dist.push_back(std::sqrt(b));
            report.pairs.emplace_back(fp_dist.back(), weight_dist.back());
        }
    }
    if (pearson_degenerate(fp_dist) || pearson_degenerate(weight_dist)) {
        report.degenerate = true;
        return report;
    }
    report.pearson_r = pearson_correlation(fp_dist, weight_dist);
    report.kendall_tau = kendall_tau(fp_dist, weight_dist);
    return report;
}

}  // namespace codemerge
