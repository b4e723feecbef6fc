#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "hicodit/eval.hpp"
#include "hicodit/verify.hpp"

using namespace hicodit;

namespace {

std::vector<TrainingExample> small_corpus(int n, std::uint64_t stream = 0) {
    std::vector<TrainingExample> d;
    for (const auto& s : generate(SynthSpec{}, n, stream)) d.push_back({s.grid0, s.conditions(), s.face, s.identity_target});
    return d;
}

}  // namespace

TEST(Dse, TermExamples) {
    EXPECT_EQ(dse_term(1.0, 1.0), 0.0);
    // 2 - log 2 - 1 (mpmath)
    EXPECT_NEAR(dse_term(2.0, 1.0), 0.3068528194400547, 1e-15);
    EXPECT_NEAR(dse_term(0.5, 0.0), 0.5, 1e-15);
    EXPECT_THROW(dse_term(0.0, 1.0), std::domain_error);
    EXPECT_EQ(dse_term_grad(3.0, 3.0), 0.0);
}

TEST(Dse, LossMatchesDirectSum) {
    const NoiseSchedule s;
    Rng rng = make_rng(1);
    TokenGrid x0(3, 5, 4, 0);
    for (int r = 0; r < 3; ++r) {
        for (int j = 0; j < 5; ++j) x0.set(r, j, uniform_int(rng, 4));
    }
    const double t = 0.7;
    const TokenGrid xt = forward_sample(x0, s, t, 2);
    LogScoreField ls(3, 5, 4);
    for (auto& v : ls.values) v = normal(rng);
    double direct = 0.0;
    const double c = 1.0 / std::expm1(s.sigma_bar(t));
    for (int r = 0; r < 3; ++r) {
        for (int j = 0; j < 5; ++j) {
            if (!xt.is_masked(r, j)) continue;
            for (int v = 0; v < 4; ++v) {
                const double sv = std::exp(ls.at(r, j, v));
                const double cv = v == x0.at(r, j) ? c : 0.0;
                direct += sv - cv * std::log(sv) + (cv > 0 ? cv * std::log(cv) - cv : 0.0);
            }
        }
    }
    direct *= s.sigma(t);
    const auto res = dse_loss_from_log(ls, xt, x0, s, t);
    EXPECT_NEAR(res.loss, direct, 1e-10 * std::abs(direct));
    EXPECT_NEAR(dse_loss(exp_field(ls), xt, x0, s, t), direct, 1e-10 * std::abs(direct));
}

TEST(Dse, LogGradientMatchesFiniteDifference) {
    const NoiseSchedule s;
    Rng rng = make_rng(2);
    const TokenGrid x0(2, 4, 5, 3);
    const double t = 0.4;
    const TokenGrid xt = forward_sample(x0, s, t, 8);
    LogScoreField ls(2, 4, 5);
    for (auto& v : ls.values) v = normal(rng);
    const auto res = dse_loss_from_log(ls, xt, x0, s, t);
    for (std::size_t k = 0; k < ls.values.size(); ++k) {
        LogScoreField p = ls, m = ls;
        p.values[k] += 1e-6;
        m.values[k] -= 1e-6;
        const double num = (dse_loss_from_log(p, xt, x0, s, t).loss - dse_loss_from_log(m, xt, x0, s, t).loss) / 2e-6;
        EXPECT_LT(grad_rel_error(res.grad.values[k], num, 1e-6), 1e-6) << k;
    }
}

TEST(Dse, VerifyGroupPasses) {
    for (const auto& c : verify_dse()) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
}

TEST(IdentityLoss, Examples) {
    nn::Vec a(3), b(3);
    a << 1, 2, 3;
    b << 1, 0, 6;
    EXPECT_NEAR(identity_loss(a, b), 5.0 / 3.0, 1e-15);
    EXPECT_EQ(identity_loss(a, a), 0.0);
    EXPECT_EQ(total_loss(1.0, 0.01, 100.0), 2.0);
}

TEST(Dropout, Statistics) {
    for (const auto& c : verify_dropout()) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
}

TEST(TrainLoop, MetricsRowsAndDeterminism) {
    const auto data = small_corpus(64);
    TrainConfig cfg;
    cfg.iters = 10;
    cfg.lr = 1e-3;
    std::string traces[2];
    for (auto& tr : traces) {
        ScoreNetwork net(ExperimentConfig{}.network_config(), 3);
        std::ostringstream csv;
        TrainHooks h;
        h.csv = &csv;
        h.stable_csv = true;
        const auto res = train_loop(cfg, data, net, NoiseSchedule{}, h);
        EXPECT_EQ(res.iterations, 10);
        EXPECT_FALSE(res.non_finite);
        tr = csv.str();
    }
    EXPECT_EQ(traces[0], traces[1]);
    std::istringstream in(traces[0]);
    std::string line;
    int rows = -1;
    std::getline(in, line);
    EXPECT_EQ(line, "iter,dse_loss,id_loss,total_loss,mask_fraction_mean,wall_ms");
    rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 10);
}

TEST(TrainLoop, ZeroLearningRateKeepsParameters) {
    const auto data = small_corpus(32);
    TrainConfig cfg;
    cfg.iters = 5;
    cfg.lr = 0.0;
    ScoreNetwork net(ExperimentConfig{}.network_config(), 4);
    const nn::ParameterSet before = net.parameters();
    train_loop(cfg, data, net, NoiseSchedule{});
    EXPECT_TRUE(net.parameters() == before);
}

TEST(TrainLoop, NonFiniteLossStops) {
    const auto data = small_corpus(32);
    TrainConfig cfg;
    cfg.iters = 20;
    ScoreNetwork net(ExperimentConfig{}.network_config(), 4);
    TrainHooks h;
    h.on_iter = [&](const IterationMetrics& m) {
        if (m.iter == 6) net.parameters()[0].setConstant(std::nan(""));
    };
    const auto res = train_loop(cfg, data, net, NoiseSchedule{}, h);
    EXPECT_TRUE(res.non_finite);
    EXPECT_EQ(res.last_good_iter, 6);
    EXPECT_EQ(res.last.iter, 7);
}

TEST(TrainLoop, HeldOutLossDecreases) {
    const auto data = small_corpus(2000);
    std::vector<LabeledExample> held;
    for (const auto& s : generate(SynthSpec{}, 128, 1)) held.push_back(labeled(s));
    const NoiseSchedule sched;
    const CorruptedSet cs = corrupt_uniform(held, sched, 5);
    ScoreNetwork net(ExperimentConfig{}.network_config(), 5);
    const double before = heldout_dse(NetworkScoreModel(net, sched), held, cs, sched);
    TrainConfig cfg;
    cfg.iters = 400;
    cfg.lr = 1e-3;
    train_loop(cfg, data, net, sched);
    const double after = heldout_dse(NetworkScoreModel(net, sched), held, cs, sched);
    EXPECT_LT(after, 0.5 * before) << before << " -> " << after;
}

TEST(TrainBatch, TimesWithinRangeAndDropoutApplied) {
    const auto data = small_corpus(16);
    TrainConfig cfg;
    cfg.batch = 256;
    const NoiseSchedule s;
    const TrainBatch b = make_train_batch(data, s, cfg, 0);
    int nulls = 0;
    for (std::size_t i = 0; i < b.times.size(); ++i) {
        EXPECT_GE(b.times[i], cfg.t_floor * s.horizon);
        EXPECT_LE(b.times[i], s.horizon);
        EXPECT_EQ(b.sigma_bars[i], s.sigma_bar(b.times[i]));
        nulls += b.conds[i].all_null();
    }
    EXPECT_GT(nulls, 5);
    EXPECT_LT(nulls, 60);
}
