// SPDX-License-Identifier: Apache-2.0
#include "codemerge/stats.hpp"

#include <gtest/gtest.h>

#include <vector>

#include "test_support.hpp"

using namespace codemerge;

TEST(Pearson, AffineRelationGivesOne) {
    const std::vector<double> a = {1.0, 2.0, 5.0, 9.0};
    std::vector<double> b;
    for (double v : a) b.push_back(2.0 * v + 3.0);
    EXPECT_NEAR(pearson_correlation(a, b), 1.0, 1e-12);
    for (double& v : b) v = -v;
    EXPECT_NEAR(pearson_correlation(a, b), -1.0, 1e-12);
}

TEST(Pearson, ZeroVarianceDetected) {
    const std::vector<double> flat = {2.0, 2.0, 2.0};
    const std::vector<double> other = {1.0, 2.0, 3.0};
    EXPECT_TRUE(pearson_degenerate(flat));
    EXPECT_FALSE(pearson_degenerate(other));
    EXPECT_EQ(pearson_correlation(flat, other), 0.0);
}

TEST(Kendall, PerfectConcordanceAndReversal) {
    const std::vector<double> a = {1.0, 2.0, 3.0, 4.0};
    const std::vector<double> up = {10.0, 20.0, 30.0, 40.0};
    const std::vector<double> down = {40.0, 30.0, 20.0, 10.0};
    EXPECT_DOUBLE_EQ(kendall_tau(a, up), 1.0);
    EXPECT_DOUBLE_EQ(kendall_tau(a, down), -1.0);
}

TEST(Kendall, TiesContributeZero) {
    const std::vector<double> a = {1.0, 1.0, 2.0};
    const std::vector<double> b = {5.0, 7.0, 9.0};
    // Pairs: (0,1) tied in a -> 0; (0,2) and (1,2) concordant -> +2 of 3.
    EXPECT_NEAR(kendall_tau(a, b), 2.0 / 3.0, 1e-15);
}

TEST(Kendall, MatchesBruteForcePairCountExactly) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        codemerge::SplitMix64 rng(seed);
        const std::size_t n = 2 + rng.next_u64() % 30;
        std::vector<double> a;
        std::vector<double> b;
        for (std::size_t i = 0; i < n; ++i) {
            // Quantized values so ties actually occur.
            a.push_back(static_cast<double>(rng.next_u64() % 7));
            b.push_back(static_cast<double>(rng.next_u64() % 7));
        }
        long long concordant = 0;
        long long discordant = 0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                const double da = a[i] - a[j];
                const double db = b[i] - b[j];
                if (da == 0.0 || db == 0.0) continue;
                if ((da > 0.0 && db > 0.0) || (da < 0.0 && db < 0.0)) {
                    ++concordant;
                } else {
                    ++discordant;
                }
            }
        }
        const double expected = static_cast<double>(concordant - discordant) /
                                (static_cast<double>(n) * (static_cast<double>(n) - 1.0) / 2.0);
        EXPECT_DOUBLE_EQ(kendall_tau(a, b), expected) << "seed " << seed;
    }
}

TEST(Stats, RejectShortOrMisalignedInput) {
    const std::vector<double> one = {1.0};
    const std::vector<double> two = {1.0, 2.0};
    EXPECT_THROW(pearson_correlation(one, one), ParameterError);
    EXPECT_THROW(pearson_correlation(two, one), ParameterError);
    EXPECT_THROW(kendall_tau(one, one), ParameterError);
}
