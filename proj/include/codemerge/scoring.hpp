// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "codemerge/errors.hpp"

namespace codemerge {

/// Divisor c in the regularized covariance Z^T Z / c + lambda I.
/// RowCount uses the number of stored fingerprints (a proper average,
/// independent of the top-k hyperparameter); FixedK uses top_k.
enum class CovarianceDivisor { RowCount, FixedK };

struct ScoringConfig {
    double lambda = 0.1;
    CovarianceDivisor divisor_mode = CovarianceDivisor::RowCount;
    int top_k = 5;
    double ema_beta = 0.99;
    double kernel_jitter = 1e-6;
    /// Negative kernel-synergy weights pass through by default; set to clamp
    /// them to zero and renormalize.
    bool clamp_negative_synergy = false;

    void validate() const {
        if (!(lambda > 0.0) || !std::isfinite(lambda)) {
            throw ParameterError("scoring lambda must be positive and finite");
        }
        if (top_k < 1) {
            throw ParameterError("top_k must be >= 1");
        }
        if (!(ema_beta > 0.0 && ema_beta < 1.0)) {
            throw ParameterError("ema_beta must lie strictly inside (0,1)");
        }
        if (kernel_jitter < 0.0 || !std::isfinite(kernel_jitter)) {
            throw ParameterError("kernel_jitter must be >= 0");
        }
    }
};

/// Which algebraic route computes the leverage scores. Auto picks the
/// smaller eigenproblem: the d'xd' covariance form when d' <= n, else the
/// nxn Gram form (both O(min(n,d')^3), no explicit large inverse).
enum class RlsForm { Auto, Covariance, Gram };

/// The scoring -> merging handoff: selected steps sorted by descending raw
/// score (ties by ascending step), with scores normalized to sum to 1.
struct MergePlan {
    std::vector<std::uint64_t> selected_steps;
    std::vector<double> raw_scores;
    std::vector<double> weights;
};

/// Ridge leverage scores s_i = z_i^T (Z^T Z / c + lambda I)^{-1} z_i for
/// every row z_i of Z. A high score marks a fingerprint that is influential
/// and little covered by the directions already stored.
inline std::vector<double> ridge_leverage_scores(const Eigen::MatrixXd& Z,
                                                 const ScoringConfig& cfg,
                                                 RlsForm form = RlsForm::Auto) {
    cfg.validate();
    const Eigen::Index n = Z.rows();
    const Eigen::Index d = Z.cols();
    if (n < 1 || d < 1) {
        throw ParameterError("fingerprint matrix must be non-empty");
    }
    if (!Z.allFinite()) {
        throw ParameterError("fingerprint matrix contains non-finite values");
    }
    const double c = cfg.divisor_mode == CovarianceDivisor::RowCount
                         ? static_cast<double>(n)
                         : static_cast<double>(cfg.top_k);
    const double lambda = cfg.lambda;

    if (form == RlsForm::Auto) {
        form = d <= n ? RlsForm::Covariance : RlsForm::Gram;
    }

    std::vector<double> scores(static_cast<std::size_t>(n));
    if (form == RlsForm::Covariance) {
        const Eigen::MatrixXd cov = (Z.transpose() * Z) / c;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
        const Eigen::VectorXd evals = eig.eigenvalues().cwiseMax(0.0);
        // s_i = || diag(1/sqrt(sigma + lambda)) V^T z_i ||^2
        const Eigen::MatrixXd w = Z * eig.eigenvectors();
        for (Eigen::Index i = 0; i < n; ++i) {
            double s = 0.0;
            for (Eigen::Index k = 0; k < d; ++k) {
                s += w(i, k) * w(i, k) / (evals(k) + lambda);
            }
            scores[static_cast<std::size_t>(i)] = s;
        }
    } else {
        // Push-through identity: z_i^T (Z^T Z / c + lambda I)^{-1} z_i
        //   = c * [G (G + lambda I)^{-1}]_{ii}  with  G = Z Z^T / c.
        const Eigen::MatrixXd gram = (Z * Z.transpose()) / c;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
        const Eigen::VectorXd evals = eig.eigenvalues().cwiseMax(0.0);
        const Eigen::MatrixXd& u = eig.eigenvectors();
        for (Eigen::Index i = 0; i < n; ++i) {
            double s = 0.0;
            for (Eigen::Index k = 0; k < n; ++k) {
                s += u(i, k) * u(i, k) * evals(k) / (evals(k) + lambda);
            }
            scores[static_cast<std::size_t>(i)] = c * s;
        }
    }
    return scores;
}

/// Selects the top-k entries by score (all of them when fewer than k) and
/// normalizes the selected scores to merge weights.
inline MergePlan make_merge_plan(std::span<const double> scores,
                                 std::span<const std::uint64_t> steps, int k) {
    if (k < 1) {
        throw ParameterError("merge plan k must be >= 1");
    }
    if (scores.empty() || scores.size() != steps.size()) {
        throw ParameterError("scores and steps must be aligned and non-empty");
    }
    for (double s : scores) {
        if (!std::isfinite(s) || s <= 0.0) {
            throw ParameterError("merge plan requires finite positive scores");
        }
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return steps[a] < steps[b];
    });
    const std::size_t take = std::min(order.size(), static_cast<std::size_t>(k));

    MergePlan plan;
    plan.selected_steps.reserve(take);
    plan.raw_scores.reserve(take);
    double total = 0.0;
    for (std::size_t i = 0; i < take; ++i) {
        plan.selected_steps.push_back(steps[order[i]]);
        plan.raw_scores.push_back(scores[order[i]]);
        total += scores[order[i]];
    }
    plan.weights.reserve(take);
    for (double s : plan.raw_scores) plan.weights.push_back(s / total);
    return plan;
}

/// Unrolled exponential-moving-average weights over steps 0..t with the
/// recursion seeded at step 0: weight(0) = beta^t, weight(i) = (1-beta) *
/// beta^{t-i} for i >= 1. Sums to 1 analytically.
inline std::vector<double> ema_weights(int t, double beta) {
    if (t < 0) {
        throw ParameterError("ema_weights requires t >= 0");
    }
    if (!(beta > 0.0 && beta < 1.0)) {
        throw ParameterError("ema beta must lie strictly inside (0,1)");
    }
    std::vector<double> w(static_cast<std::size_t>(t) + 1);
    double p = 1.0;  // beta^{t-i}
    for (int i = t; i >= 1; --i) {
        w[static_cast<std::size_t>(i)] = (1.0 - beta) * p;
        p *= beta;
    }
    w[0] = p;
    return w;
}

inline double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.dot(b) / (na * nb);
}

/// Kernel-synergy weights: w_i = sum_j [K^{-1}]_{ij} / sum_{i'j'} [K^{-1}]_{i'j'}
/// after adding jitter * I. Weights sum to 1; they may be negative unless
/// clamping is requested.
inline std::vector<double> kernel_synergy_weights(const Eigen::MatrixXd& kernel, double jitter,
                                                  bool clamp_negative = false) {
    const Eigen::Index k = kernel.rows();
    if (k < 1 || kernel.cols() != k) {
        throw ParameterError("kernel must be square and non-empty");
    }
    if (!kernel.allFinite()) {
        throw ParameterError("kernel contains non-finite values");
    }
    if ((kernel - kernel.transpose()).cwiseAbs().maxCoeff() > 1e-9) {
        throw ParameterError("kernel must be symmetric");
    }
    if (jitter < 0.0 || !std::isfinite(jitter)) {
        throw ParameterError("jitter must be >= 0");
    }
    Eigen::MatrixXd m = kernel;
    m.diagonal().array() += jitter;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
    const Eigen::VectorXd& evals = eig.eigenvalues();
    const double max_abs = evals.cwiseAbs().maxCoeff();
    if (max_abs == 0.0 || evals.cwiseAbs().minCoeff() < 1e-12 * max_abs) {
        throw NumericalError("kernel is singular even after jitter " + std::to_string(jitter) +
                             "; increase the jitter");
    }
    const Eigen::MatrixXd inv =
        eig.eigenvectors() * evals.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
    const Eigen::VectorXd row_sums = inv.rowwise().sum();
    const double total = row_sums.sum();
    if (std::abs(total) < 1e-12 * inv.cwiseAbs().maxCoeff() * static_cast<double>(k)) {
        throw NumericalError("kernel inverse row sums cancel; increase the jitter");
    }
    std::vector<double> weights(static_cast<std::size_t>(k));
    for (Eigen::Index i = 0; i < k; ++i) {
        weights[static_cast<std::size_t>(i)] = row_sums(i) / total;
    }
    if (clamp_negative) {
        double clipped_total = 0.0;
        for (double& w : weights) {
            w = std::max(w, 0.0);
            clipped_total += w;
        }
        if (clipped_total <= 0.0) {
            throw NumericalError("all synergy weights clamped to zero");
        }
        for (double& w : weights) w /= clipped_total;
    }
    return weights;
}

/// Model-synergy weights from per-model output and feature vectors on the
/// current batch: K_ij = cos(outputs_i, outputs_j) * cos(features_i,
/// features_j), then kernel_synergy_weights.
inline std::vector<double> mos_weights(const std::vector<Eigen::VectorXd>& outputs,
                                       const std::vector<Eigen::VectorXd>& features,
                                       double jitter, bool clamp_negative = false) {
    const std::size_t k = outputs.size();
    if (k < 1 || features.size() != k) {
        throw ParameterError("mos_weights requires aligned non-empty outputs and features");
    }
    for (std::size_t i = 1; i < k; ++i) {
        if (outputs[i].size() != outputs[0].size()) {
            throw ParameterError("model outputs must share one length");
        }
        if (features[i].size() != features[0].size()) {
            throw ParameterError("model features must share one length");
        }
    }
    Eigen::MatrixXd kernel(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = i; j < k; ++j) {
            const double sim = cosine_similarity(outputs[i], outputs[j]) *
                               cosine_similarity(features[i], features[j]);
            kernel(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = sim;
            kernel(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = sim;
        }
    }
    return kernel_synergy_weights(kernel, jitter, clamp_negative);
}

}  // namespace codemerge
