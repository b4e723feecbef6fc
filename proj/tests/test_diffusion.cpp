#include <gtest/gtest.h>

#include <cmath>

#include "hicodit/diffusion.hpp"
#include "hicodit/verify.hpp"

using namespace hicodit;

TEST(ForwardMask, ExtremesAndDeterminism) {
    const TokenGrid x0(3, 7, 5, 2);
    EXPECT_EQ(forward_mask(x0, 0.0, 1), x0);
    EXPECT_EQ(forward_mask(x0, 1.0, 1).masked_count(), 21);
    EXPECT_EQ(forward_mask(x0, 0.4, 9), forward_mask(x0, 0.4, 9));
    EXPECT_NE(forward_mask(x0, 0.4, 9), forward_mask(x0, 0.4, 10));
}

TEST(ForwardMask, MaskedSetsNestAcrossProbabilities) {
    // Position-derived uniforms make masking monotone in the probability for a fixed seed.
    const TokenGrid x0(4, 16, 8, 1);
    const TokenGrid a = forward_mask(x0, 0.3, 5), b = forward_mask(x0, 0.6, 5);
    for (int r = 0; r < 4; ++r) {
        for (int j = 0; j < 16; ++j) {
            if (a.is_masked(r, j)) {
                EXPECT_TRUE(b.is_masked(r, j));
            }
        }
    }
}

TEST(ConcreteScore, HalfMaskRatioIsOne) {
    const NoiseSchedule s;
    const TokenGrid x0(2, 6, 4, 3);
    const double t = time_for_sigma_bar(s, std::log(2.0));
    const TokenGrid xt = forward_sample(x0, s, t, 4);
    const auto c = true_concrete_score(xt, x0, s, t);
    EXPECT_NEAR(c.ratio, 1.0, 1e-12);
    ASSERT_FALSE(c.positions.empty());
    for (const auto& p : c.positions) {
        EXPECT_EQ(p.clean_token, 3);
        EXPECT_EQ(c.value(p, 3), c.ratio);
        EXPECT_EQ(c.value(p, 0), 0.0);
    }
}

TEST(ConcreteScore, SmallSigmaBar) {
    const NoiseSchedule s;
    // e^{-0.01} / (1 - e^{-0.01}) (mpmath)
    EXPECT_NEAR(s.score_ratio(time_for_sigma_bar(s, 0.01)), 99.50083333194445, 1e-8);
}

TEST(ReverseStep, FinalStepUnmasksEverything) {
    const NoiseSchedule s;
    const TokenGrid x = TokenGrid::all_masked(2, 3, 4);
    const ScoreField sc(2, 3, 4, 0.25);
    const TokenGrid y = reverse_step(x, sc, s, 0.1, 0.1, 3);
    EXPECT_EQ(y.masked_count(), 0);
}

TEST(ReverseStep, TransitionFrequencies) {
    // One masked token: P(v) = sigma dt s_v, P(stay) = 1 - sum.
    const NoiseSchedule s;
    const double t = 0.5, dt = 0.01;
    ScoreField sc(1, 1, 3, 0.0);
    sc.at(0, 0, 0) = 10.0;
    sc.at(0, 0, 1) = 30.0;
    const double q0 = s.sigma(t) * dt * 10.0, q1 = s.sigma(t) * dt * 30.0;
    const TokenGrid x = TokenGrid::all_masked(1, 1, 3);
    const int n = 200000;
    int c0 = 0, c1 = 0, c2 = 0;
    for (int i = 0; i < n; ++i) {
        const TokenId v = reverse_step(x, sc, s, t, dt, derive_seed(77, i)).at(0, 0);
        c0 += v == 0;
        c1 += v == 1;
        c2 += v == 2;
    }
    EXPECT_TRUE(within_binomial(c0 / double(n), q0, n)) << c0;
    EXPECT_TRUE(within_binomial(c1 / double(n), q1, n)) << c1;
    EXPECT_EQ(c2, 0);
}

TEST(Diffusion, VerifyGroupPasses) {
    for (const auto& c : verify_diffusion(NoiseSchedule{})) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
}
