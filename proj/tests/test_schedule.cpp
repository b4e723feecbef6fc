#include <gtest/gtest.h>

#include <cmath>

#include "hicodit/schedule.hpp"
#include "hicodit/verify.hpp"

using namespace hicodit;

// sigma_bar(T/2) for eps = 1e-3, from -log(1 - 0.4995) and from quadrature of sigma (mpmath, 30 digits).
constexpr double kSigmaBarHalf = 0.6921476802268618;

TEST(Schedule, LogLinearHalfTime) {
    const NoiseSchedule s;
    EXPECT_NEAR(s.sigma_bar(0.5), kSigmaBarHalf, 1e-15);
    EXPECT_NEAR(s.mask_probability(0.5), 0.4995, 1e-15);
    EXPECT_NEAR(integrate([&](double t) { return s.sigma(t); }, 0.0, 0.5), kSigmaBarHalf, 1e-12);
}

TEST(Schedule, LogLinearEndpoints) {
    const NoiseSchedule s;
    EXPECT_EQ(s.sigma_bar(0.0), 0.0);
    EXPECT_NEAR(s.mask_probability(1.0), 0.999, 1e-15);
    EXPECT_NEAR(s.sigma(1.0), 999.0, 1e-9);
    EXPECT_NEAR(s.sigma(0.0), 0.999, 1e-15);
}

TEST(Schedule, LogLinearSigmaTimesRatioIsInverseTime) {
    const NoiseSchedule s;
    for (double t : {0.01, 0.2, 0.5, 0.9, 1.0}) EXPECT_NEAR(s.sigma(t) * s.score_ratio(t), 1.0 / t, 1e-9 / t);
}

TEST(Schedule, LinearSigmaIntegral) {
    NoiseSchedule s;
    s.kind = ScheduleKind::linear_sigma;
    s.sigma_min = 0.5;
    s.sigma_max = 4.0;
    s.horizon = 2.0;
    for (double t : {0.3, 1.0, 2.0}) {
        EXPECT_NEAR(integrate([&](double u) { return s.sigma(u); }, 0.0, t), s.sigma_bar(t), 1e-12);
    }
    EXPECT_NEAR(s.sigma_bar(2.0), 0.5 * 2.0 + 0.5 * 3.5 * 2.0, 1e-14);
}

TEST(Schedule, MaskProbabilityExamples) {
    EXPECT_EQ(mask_probability_from_sigma_bar(0.0), 0.0);
    EXPECT_NEAR(mask_probability_from_sigma_bar(std::log(2.0)), 0.5, 1e-15);
    EXPECT_NEAR(mask_probability_from_sigma_bar(20.0), 1.0, 1e-8);
}

TEST(Schedule, TimeForSigmaBarInverts) {
    NoiseSchedule lin;
    lin.kind = ScheduleKind::linear_sigma;
    lin.sigma_min = 0.2;
    lin.sigma_max = 3.0;
    for (const NoiseSchedule& s : {NoiseSchedule{}, lin}) {
        for (double sb : {0.05, std::log(2.0), 1.3}) EXPECT_NEAR(s.sigma_bar(time_for_sigma_bar(s, sb)), sb, 1e-12);
    }
    EXPECT_THROW(time_for_sigma_bar(NoiseSchedule{}, 20.0), std::out_of_range);
}

TEST(Schedule, Errors) {
    const NoiseSchedule s;
    EXPECT_THROW(s.sigma(-0.1), std::out_of_range);
    EXPECT_THROW(s.sigma_bar(1.5), std::out_of_range);
    NoiseSchedule bad;
    bad.eps = 0.0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    EXPECT_THROW(schedule_kind_from_string("cosine"), std::invalid_argument);
}

TEST(Marginals, AllChecksPass) {
    for (const auto& c : verify_marginals(NoiseSchedule{})) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
    NoiseSchedule lin;
    lin.kind = ScheduleKind::linear_sigma;
    lin.sigma_min = 0.1;
    lin.sigma_max = 5.0;
    for (const auto& c : verify_marginals(lin)) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
}

TEST(Marginals, NonMonotoneFaultIsCaught) {
    int failed = 0;
    bool mono_failed = false;
    for (const auto& c : verify_marginals(NoiseSchedule{}, Fault::sigma_bar_nonmonotone)) {
        failed += !c.passed;
        mono_failed = mono_failed || (c.name == "sigma_bar_strictly_increasing" && !c.passed);
    }
    EXPECT_TRUE(mono_failed);
    EXPECT_GE(failed, 2);
}
