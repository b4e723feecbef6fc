#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "hicodit/eval.hpp"
#include "hicodit/verify.hpp"

using namespace hicodit;

TEST(Synth, ShapesAndDeterminism) {
    const SynthSpec spec;
    const auto a = generate(spec, 10, 0);
    const auto b = generate(spec, 10, 0);
    const auto c = generate(spec, 10, 1);
    ASSERT_EQ(a.size(), 10u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].grid0, b[i].grid0);
        EXPECT_EQ(a[i].lip, b[i].lip);
        EXPECT_EQ(a[i].grid0.levels(), 4);
        EXPECT_EQ(a[i].lip.rows(), 8);
        EXPECT_EQ(a[i].lip.cols(), spec.lip_dim());
        EXPECT_EQ(a[i].emotions.size(), 2u);
        EXPECT_EQ(a[i].grid0.masked_count(), 0);
    }
    bool differ = false;
    for (std::size_t i = 0; i < a.size(); ++i) differ = differ || !(a[i].grid0 == c[i].grid0);
    EXPECT_TRUE(differ);
    // Sample i does not depend on how many samples were requested.
    EXPECT_EQ(generate(spec, 3, 0, 7)[0].grid0, generate(spec, 10, 0)[7].grid0);
    EXPECT_THROW(generate(spec, 0), std::invalid_argument);
}

TEST(Synth, IdentityTargetsAreUnitNorm) {
    const SynthTables t = make_tables(SynthSpec{});
    for (const auto& v : t.identity) EXPECT_NEAR(v.norm(), 1.0, 1e-12);
}

TEST(Synth, SidecarRoundTrip) {
    const auto s = generate(SynthSpec{}, 3, 2);
    std::stringstream ss;
    write_sidecar(ss, s);
    const auto recs = read_sidecar(ss);
    ASSERT_EQ(recs.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(*recs[i].bundle.lip, s[i].lip);
        EXPECT_EQ(*recs[i].bundle.emo, s[i].emotions);
        EXPECT_FALSE(recs[i].bundle.id.has_value());
        EXPECT_EQ(*recs[i].identity_target, s[i].identity_target);
        EXPECT_EQ(*recs[i].face, s[i].face);
        EXPECT_EQ(*recs[i].speaker, s[i].speaker);
    }
}

TEST(Synth, SidecarNullMarkers) {
    std::stringstream ss("{\"lip\": null, \"emotions\": [1, 2], \"id\": null}\n\n{}\n");
    const auto recs = read_sidecar(ss);
    ASSERT_EQ(recs.size(), 2u);
    EXPECT_FALSE(recs[0].bundle.lip.has_value());
    EXPECT_TRUE(recs[0].bundle.emo.has_value());
    EXPECT_TRUE(recs[1].bundle.all_null());
    std::stringstream bad("{\"lip\": [[1, 2], [3]]}\n");
    EXPECT_THROW(read_sidecar(bad), std::runtime_error);
}

TEST(Oracle, PosteriorsNormalize) {
    const SynthSpec spec;
    const SynthOracle o(spec);
    const auto s = generate(spec, 4, 3);
    const NoiseSchedule sched;
    for (const auto& x : s) {
        const TokenGrid xt = forward_sample(x.grid0, sched, 0.6, 9);
        for (const ConditionBundle& b : {x.conditions(), ConditionBundle{}, x.conditions().only(Condition::emo)}) {
            const PosteriorField p = o.posterior(xt, b);
            for (int r = 0; r < spec.levels; ++r) {
                for (int j = 0; j < spec.frames; ++j) {
                    double sum = 0.0;
                    for (int v = 0; v < spec.vocab; ++v) sum += p.at(r, j, v);
                    EXPECT_NEAR(sum, 1.0, 1e-12);
                    if (!xt.is_masked(r, j)) {
                        EXPECT_EQ(p.at(r, j, xt.at(r, j)), 1.0);
                    }
                }
            }
        }
    }
}

TEST(Oracle, GridDistributionSumsToOne) {
    const SynthOracle o(enumerable_spec());
    const auto p = o.grid_distribution({});
    double sum = 0.0;
    for (double v : p) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_EQ(p.size(), 256u);
    for (std::size_t i = 0; i < p.size(); i += 37) EXPECT_EQ(o.grid_index(o.grid_from_index(i)), i);
}

TEST(Oracle, TwoTokenTotalVariation) {
    // 1x2 grid over two tokens: TV between hand-computed distributions.
    EXPECT_NEAR(tv_distance({0.5, 0.25, 0.125, 0.125}, {0.25, 0.25, 0.25, 0.25}), 0.25, 1e-15);
    EXPECT_EQ(tv_distance({1, 0, 0, 0}, {1, 0, 0, 0}), 0.0);
    EXPECT_THROW(tv_distance({1.0}, {0.5, 0.5}), std::invalid_argument);
}

TEST(Oracle, RejectsIntractableConfigs) {
    SynthSpec big;
    big.frames = 200;
    big.emotion_downsample = 1;
    big.speakers = 64;
    big.vocab = 64;
    big.phonemes = 64;
    EXPECT_THROW(SynthOracle{big}.check_tractable(), std::invalid_argument);
    EXPECT_NO_THROW(SynthOracle{SynthSpec{}}.check_tractable());
}

TEST(Oracle, BayesRateWithKnownLatents) {
    // 1 - eps + eps / V with eps = 0.1, V = 8
    EXPECT_NEAR(bayes_argmax_rate_known_latents(SynthSpec{}), 0.9125, 1e-15);
    const SynthOracle o{SynthSpec{}};
    std::vector<LabeledExample> data;
    for (const auto& s : generate(SynthSpec{}, 200, 4)) data.push_back(labeled(s));
    const auto cs = corrupt_half(data, NoiseSchedule{}, 2);
    EXPECT_NEAR(bayes_argmax_rate(o, data, cs).overall, 0.9125, 1e-6);
}

TEST(Oracle, AccuracyMatchesBayesRate) {
    const SynthSpec spec;
    const SynthOracle o(spec);
    const NoiseSchedule sched;
    const OracleScoreModel model(o, sched);
    std::vector<LabeledExample> data;
    for (const auto& s : generate(spec, 1000, 5)) data.push_back(labeled(s));
    for (auto& d : data) d.conditions = d.conditions.only(Condition::lip);  // non-degenerate posteriors
    const auto cs = corrupt_half(data, sched, 3);
    const auto acc = argmax_accuracy(model, data, cs);
    const auto bayes = bayes_argmax_rate(o, data, cs);
    long n = 0;
    for (long c : acc.count) n += c;
    const double sd = std::sqrt(bayes.overall * (1 - bayes.overall) / n);
    EXPECT_LT(std::abs(acc.overall - bayes.overall), 3 * sd) << acc.overall << " vs " << bayes.overall;
}

TEST(Synth, VerifyGroupPasses) {
    for (const auto& c : verify_synth()) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
}

TEST(Oracle, VerifyGroupPasses) {
    for (const auto& c : verify_oracle()) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
}
