// SPDX-License-Identifier: Apache-2.0
#include "codemerge/scoring.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "test_support.hpp"

using namespace codemerge;

namespace {

ScoringConfig config_with(double lambda, CovarianceDivisor mode = CovarianceDivisor::RowCount,
                          int top_k = 5) {
    ScoringConfig cfg;
    cfg.lambda = lambda;
    cfg.divisor_mode = mode;
    cfg.top_k = top_k;
    return cfg;
}

std::vector<std::size_t> argsort_desc(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    return idx;
}

}  // namespace

TEST(RidgeLeverage, RankOneAnalyticValue) {
    // Single unit-norm fingerprint, c = 1, lambda = 0.5:
    // s = z^T (z z^T + 0.5 I)^{-1} z = 1 / (1 + 0.5) = 2/3.
    Eigen::MatrixXd z(1, 4);
    z << 0.5, 0.5, 0.5, 0.5;  // unit norm
    const auto scores = ridge_leverage_scores(z, config_with(0.5));
    ASSERT_EQ(scores.size(), 1u);
    EXPECT_NEAR(scores[0], 2.0 / 3.0, 1e-12);
}

TEST(RidgeLeverage, TwoIdenticalUnitFingerprints) {
    // (1/2)(2 z z^T) = z z^T, so each score is again 1/(1 + lambda).
    Eigen::MatrixXd z(2, 3);
    z << 1, 0, 0, 1, 0, 0;
    const auto scores = ridge_leverage_scores(z, config_with(0.5));
    ASSERT_EQ(scores.size(), 2u);
    EXPECT_NEAR(scores[0], 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(scores[1], 2.0 / 3.0, 1e-12);
}

TEST(RidgeLeverage, MatchesDenseInverseOracle) {
    const Eigen::MatrixXd z = testsupport::random_matrix(20, 8, 77);
    const auto scores = ridge_leverage_scores(z, config_with(0.1));
    const auto oracle = testsupport::rls_oracle(z, 0.1, 20.0);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        EXPECT_NEAR(scores[i], oracle[i], 1e-6 * std::abs(oracle[i]));
    }
}

TEST(RidgeLeverage, FixedDivisorMatchesOracle) {
    const Eigen::MatrixXd z = testsupport::random_matrix(12, 6, 78);
    const auto scores = ridge_leverage_scores(z, config_with(0.3, CovarianceDivisor::FixedK, 4));
    const auto oracle = testsupport::rls_oracle(z, 0.3, 4.0);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        EXPECT_NEAR(scores[i], oracle[i], 1e-6 * std::abs(oracle[i]));
    }
}

TEST(RidgeLeverage, GramAndCovarianceFormsAgree) {
    // Both algebraic routes must agree to 1e-6 relative for all n, d' <= 64.
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        codemerge::SplitMix64 rng(seed);
        const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.next_u64() % 64);
        const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.next_u64() % 64);
        const Eigen::MatrixXd z = testsupport::random_matrix(n, d, 9000 + seed);
        const auto cfg = config_with(0.05 + 0.3 * static_cast<double>(seed % 4));
        const auto a = ridge_leverage_scores(z, cfg, RlsForm::Covariance);
        const auto b = ridge_leverage_scores(z, cfg, RlsForm::Gram);
        for (std::size_t i = 0; i < a.size(); ++i) {
            EXPECT_NEAR(a[i], b[i], 1e-6 * std::max(std::abs(a[i]), 1e-12))
                << "seed " << seed << " row " << i;
        }
    }
}

TEST(RidgeLeverage, OrthogonalNewcomerBeatsDuplicates) {
    // A fingerprint duplicated m >= 2 times is heavily observed; an
    // orthogonal newcomer at equal norm must score strictly higher.
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        codemerge::SplitMix64 rng(seed);
        const std::size_t m = 2 + rng.next_u64() % 4;
        const Eigen::Index d = 8;
        Eigen::VectorXd z = testsupport::random_matrix(d, 1, 500 + seed).col(0);
        z.normalize();
        Eigen::VectorXd w = testsupport::random_matrix(d, 1, 900 + seed).col(0);
        w -= w.dot(z) * z;  // orthogonalize
        w.normalize();
        Eigen::MatrixXd stacked(static_cast<Eigen::Index>(m) + 1, d);
        for (std::size_t i = 0; i < m; ++i) stacked.row(static_cast<Eigen::Index>(i)) = z;
        stacked.row(static_cast<Eigen::Index>(m)) = w;
        const double lambda = 0.01 + 0.99 * rng.next_unit();
        const auto scores = ridge_leverage_scores(stacked, config_with(lambda));
        for (std::size_t i = 0; i < m; ++i) {
            EXPECT_GT(scores[m], scores[i]) << "seed " << seed;
        }
    }
}

TEST(RidgeLeverage, UniformScalingPreservesOrdering) {
    // Scaling all fingerprints by alpha and lambda by alpha^2 preserves the
    // argsort (scores themselves change).
    const Eigen::MatrixXd z = testsupport::random_matrix(15, 6, 303);
    const double alpha = 3.7;
    const auto base = ridge_leverage_scores(z, config_with(0.2));
    const auto scaled = ridge_leverage_scores(Eigen::MatrixXd(alpha * z),
                                              config_with(0.2 * alpha * alpha));
    EXPECT_EQ(argsort_desc(base), argsort_desc(scaled));
}

TEST(RidgeLeverage, ScoresBoundedByNormOverLambda) {
    const Eigen::MatrixXd z = testsupport::random_matrix(10, 5, 404);
    const double lambda = 0.25;
    const auto scores = ridge_leverage_scores(z, config_with(lambda));
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double bound = z.row(i).squaredNorm() / lambda;
        EXPECT_GT(scores[static_cast<std::size_t>(i)], 0.0);
        EXPECT_LE(scores[static_cast<std::size_t>(i)], bound * (1.0 + 1e-12));
    }
}

TEST(RidgeLeverage, RejectsBadInputs) {
    Eigen::MatrixXd z(1, 2);
    z << 1.0, std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(ridge_leverage_scores(z, config_with(0.5)), ParameterError);
    Eigen::MatrixXd ok(1, 1);
    ok << 1.0;
    EXPECT_THROW(ridge_leverage_scores(ok, config_with(0.0)), ParameterError);
    EXPECT_THROW(ridge_leverage_scores(ok, config_with(-1.0)), ParameterError);
}

TEST(MergePlan, HandCase) {
    const std::vector<double> scores = {3.0, 1.0, 2.0};
    const std::vector<std::uint64_t> steps = {1, 2, 3};
    const MergePlan plan = make_merge_plan(scores, steps, 2);
    EXPECT_EQ(plan.selected_steps, (std::vector<std::uint64_t>{1, 3}));
    ASSERT_EQ(plan.weights.size(), 2u);
    EXPECT_NEAR(plan.weights[0], 0.6, 1e-12);
    EXPECT_NEAR(plan.weights[1], 0.4, 1e-12);
}

TEST(MergePlan, SingleEntryNormalizesToOne) {
    const std::vector<double> scores = {0.123};
    const std::vector<std::uint64_t> steps = {9};
    const MergePlan plan = make_merge_plan(scores, steps, 7);
    EXPECT_EQ(plan.selected_steps, (std::vector<std::uint64_t>{9}));
    EXPECT_DOUBLE_EQ(plan.weights[0], 1.0);
}

TEST(MergePlan, EqualScoresSplitEvenly) {
    const std::vector<double> scores = {1.0, 1.0, 1.0};
    const std::vector<std::uint64_t> steps = {1, 2, 3};
    const MergePlan plan = make_merge_plan(scores, steps, 3);
    for (double w : plan.weights) EXPECT_NEAR(w, 1.0 / 3.0, 1e-12);
}

TEST(MergePlan, TiesBreakByAscendingStep) {
    const std::vector<double> scores = {2.0, 2.0, 1.0};
    const std::vector<std::uint64_t> steps = {5, 3, 1};
    const MergePlan plan = make_merge_plan(scores, steps, 2);
    EXPECT_EQ(plan.selected_steps, (std::vector<std::uint64_t>{3, 5}));
}

TEST(MergePlan, WeightsSumToOne) {
    codemerge::SplitMix64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> scores;
        std::vector<std::uint64_t> steps;
        const std::size_t n = 1 + rng.next_u64() % 12;
        for (std::size_t i = 0; i < n; ++i) {
            scores.push_back(0.01 + rng.next_unit());
            steps.push_back(i);
        }
        const MergePlan plan = make_merge_plan(scores, steps, 4);
        const double total = std::accumulate(plan.weights.begin(), plan.weights.end(), 0.0);
        EXPECT_NEAR(total, 1.0, 1e-9);
        for (double w : plan.weights) {
            EXPECT_GT(w, 0.0);
            EXPECT_LE(w, 1.0);
        }
        // Sorted by descending raw score.
        for (std::size_t i = 1; i < plan.raw_scores.size(); ++i) {
            EXPECT_GE(plan.raw_scores[i - 1], plan.raw_scores[i]);
        }
    }
}

TEST(MergePlan, RejectsBadArguments) {
    const std::vector<double> scores = {1.0};
    const std::vector<std::uint64_t> steps = {1};
    EXPECT_THROW(make_merge_plan(scores, steps, 0), ParameterError);
    EXPECT_THROW(make_merge_plan({}, {}, 1), ParameterError);
    const std::vector<double> negative = {-1.0};
    EXPECT_THROW(make_merge_plan(negative, steps, 1), ParameterError);
}

TEST(EmaWeights, BaseCase) {
    const auto w = ema_weights(0, 0.9);
    ASSERT_EQ(w.size(), 1u);
    EXPECT_DOUBLE_EQ(w[0], 1.0);
}

TEST(EmaWeights, OneUnroll) {
    const auto w = ema_weights(1, 0.9);
    ASSERT_EQ(w.size(), 2u);
    EXPECT_NEAR(w[0], 0.9, 1e-15);
    EXPECT_NEAR(w[1], 0.1, 1e-15);
}

TEST(EmaWeights, RecursionMatchesClosedForm) {
    // Unroll theta_t = beta * theta_{t-1} + (1 - beta) * x_t symbolically and
    // compare the resulting coefficients against the closed form.
    const int t = 100;
    const double beta = 0.99;
    std::vector<double> recursion = {1.0};  // weights at t = 0
    for (int step = 1; step <= t; ++step) {
        for (double& w : recursion) w *= beta;
        recursion.push_back(1.0 - beta);
    }
    const auto closed = ema_weights(t, beta);
    ASSERT_EQ(closed.size(), recursion.size());
    for (std::size_t i = 0; i < closed.size(); ++i) {
        EXPECT_NEAR(closed[i], recursion[i], 1e-12);
    }
}

TEST(EmaWeights, SumsToOne) {
    for (double beta : {0.9, 0.99, 0.999}) {
        for (int t : {0, 1, 10, 100}) {
            const auto w = ema_weights(t, beta);
            const double total = std::accumulate(w.begin(), w.end(), 0.0);
            EXPECT_NEAR(total, 1.0, 1e-12) << "beta " << beta << " t " << t;
            for (double v : w) EXPECT_GT(v, 0.0);
        }
    }
}

TEST(EmaWeights, RejectsBadBeta) {
    EXPECT_THROW(ema_weights(1, 0.0), ParameterError);
    EXPECT_THROW(ema_weights(1, 1.0), ParameterError);
    EXPECT_THROW(ema_weights(-1, 0.5), ParameterError);
}

TEST(KernelSynergy, IdentityKernelGivesUniform) {
    const Eigen::MatrixXd kernel = Eigen::MatrixXd::Identity(4, 4);
    const auto w = kernel_synergy_weights(kernel, 0.0);
    for (double v : w) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(KernelSynergy, SymmetricTwoByTwoSplitsEvenly) {
    for (double rho : {-0.9, -0.5, 0.0, 0.3, 0.7, 0.99}) {
        Eigen::MatrixXd kernel(2, 2);
        kernel << 1.0, rho, rho, 1.0;
        const auto w = kernel_synergy_weights(kernel, 0.0);
        EXPECT_NEAR(w[0], 0.5, 1e-9) << "rho " << rho;
        EXPECT_NEAR(w[1], 0.5, 1e-9) << "rho " << rho;
    }
}

TEST(KernelSynergy, MatchesDenseInverseOracle) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Eigen::Index k = 2 + static_cast<Eigen::Index>(seed % 7);
        const Eigen::MatrixXd a = testsupport::random_matrix(k, k, 620 + seed);
        Eigen::MatrixXd kernel = a * a.transpose();
        kernel.diagonal().array() += 0.5;  // keep it well conditioned
        const auto w = kernel_synergy_weights(kernel, 0.0);
        const Eigen::MatrixXd inv = testsupport::dense_inverse(kernel);
        const double total = inv.sum();
        double sum_w = 0.0;
        for (Eigen::Index i = 0; i < k; ++i) {
            const double expected = inv.row(i).sum() / total;
            EXPECT_NEAR(w[static_cast<std::size_t>(i)], expected,
                        1e-8 * std::max(1.0, std::abs(expected)));
            sum_w += w[static_cast<std::size_t>(i)];
        }
        EXPECT_NEAR(sum_w, 1.0, 1e-9);
    }
}

TEST(KernelSynergy, SingularKernelThrowsAdvice) {
    Eigen::MatrixXd kernel = Eigen::MatrixXd::Ones(3, 3);
    try {
        kernel_synergy_weights(kernel, 0.0);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("jitter"), std::string::npos) << e.what();
    }
    // Jitter rescues the same kernel.
    const auto w = kernel_synergy_weights(kernel, 1e-6);
    for (double v : w) EXPECT_NEAR(v, 1.0 / 3.0, 1e-6);
}

TEST(MosWeights, OrthogonalModelsGiveUniform) {
    std::vector<Eigen::VectorXd> outputs;
    std::vector<Eigen::VectorXd> features;
    for (int i = 0; i < 3; ++i) {
        Eigen::VectorXd o = Eigen::VectorXd::Zero(3);
        o(i) = 2.0;
        outputs.push_back(o);
        features.push_back(o);
    }
    const auto w = mos_weights(outputs, features, 0.0);
    for (double v : w) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(MosWeights, PermutationEquivariant) {
    std::vector<Eigen::VectorXd> outputs;
    std::vector<Eigen::VectorXd> features;
    for (std::uint64_t i = 0; i < 4; ++i) {
        outputs.push_back(testsupport::random_matrix(6, 1, 700 + i).col(0));
        features.push_back(testsupport::random_matrix(5, 1, 800 + i).col(0));
    }
    const auto w = mos_weights(outputs, features, 1e-6);
    const std::vector<std::size_t> perm = {2, 0, 3, 1};
    std::vector<Eigen::VectorXd> outputs_p;
    std::vector<Eigen::VectorXd> features_p;
    for (std::size_t i : perm) {
        outputs_p.push_back(outputs[i]);
        features_p.push_back(features[i]);
    }
    const auto w_p = mos_weights(outputs_p, features_p, 1e-6);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        EXPECT_NEAR(w_p[i], w[perm[i]], 1e-10);
    }
}

TEST(MosWeights, ClampingRemovesNegatives) {
    Eigen::MatrixXd kernel(3, 3);
    kernel << 1.0, 0.98, 0.1, 0.98, 1.0, 0.12, 0.1, 0.12, 1.0;
    const auto raw = kernel_synergy_weights(kernel, 0.0);
    const bool has_negative = std::any_of(raw.begin(), raw.end(), [](double w) { return w < 0.0; });
    const auto clamped = kernel_synergy_weights(kernel, 0.0, true);
    double total = 0.0;
    for (double w : clamped) {
        EXPECT_GE(w, 0.0);
        total += w;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
    (void)has_negative;
}

TEST(MosWeights, RejectsMisalignedInputs) {
    std::vector<Eigen::VectorXd> outputs = {Eigen::VectorXd::Ones(3)};
    std::vector<Eigen::VectorXd> features;
    EXPECT_THROW(mos_weights(outputs, features, 0.0), ParameterError);
    features = {Eigen::VectorXd::Ones(2), Eigen::VectorXd::Ones(2)};
    EXPECT_THROW(mos_weights(outputs, features, 0.0), ParameterError);
}
