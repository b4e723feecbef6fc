#include <gtest/gtest.h>

#include <sstream>

#include "hicodit/checkpoint.hpp"
#include "hicodit/verify.hpp"

using namespace hicodit;

namespace {

NetworkConfig desk() { return ExperimentConfig{}.network_config(); }

}  // namespace

TEST(NetworkConfig, Validation) {
    EXPECT_NO_THROW(desk().validate());
    NetworkConfig c = desk();
    c.heads = 3;  // 64 not divisible by 3
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = desk();
    c.split = c.levels;
    EXPECT_THROW(c.validate(), std::out_of_range);
    EXPECT_EQ(network_variant_from_string("flat"), NetworkVariant::flat);
    EXPECT_THROW(network_variant_from_string("deep"), std::invalid_argument);
}

TEST(Network, OutputShapes) {
    ScoreNetwork net(desk(), 1);
    net.randomize(2);
    Rng rng = make_rng(3);
    std::vector<TokenGrid> xs{random_noisy_grid(desk(), rng), random_noisy_grid(desk(), rng), random_noisy_grid(desk(), rng)};
    const std::vector<double> sb{0.1, 0.7, 3.0};
    const std::vector<ConditionBundle> cs{random_bundle(desk(), rng), ConditionBundle{}, random_bundle(desk(), rng)};
    const auto out = net.forward(xs, sb, cs);
    ASSERT_EQ(out.logits.size(), 4u);
    EXPECT_EQ(out.logits[0].rows(), 3 * 8);
    EXPECT_EQ(out.logits[0].cols(), 8);
    const auto logs = net.log_scores(xs, sb, cs);
    ASSERT_EQ(logs.size(), 3u);
    EXPECT_EQ(logs[1].at(2, 5, 7), out.logits[2](8 + 5, 7));
}

TEST(Network, BatchRowsAreIndependent) {
    ScoreNetwork net(desk(), 1);
    net.randomize(5);
    Rng rng = make_rng(6);
    std::vector<TokenGrid> xs{random_noisy_grid(desk(), rng), random_noisy_grid(desk(), rng)};
    const std::vector<double> sb{0.3, 1.1};
    const std::vector<ConditionBundle> cs{random_bundle(desk(), rng), random_bundle(desk(), rng)};
    const auto both = net.log_scores(xs, sb, cs);
    const auto second = net.log_scores(std::span(xs).last(1), std::span(sb).last(1), std::span(cs).last(1));
    double worst = 0.0;
    for (std::size_t k = 0; k < both[1].values.size(); ++k) worst = std::max(worst, std::abs(both[1].values[k] - second[0].values[k]));
    EXPECT_LT(worst, 1e-12);
}

TEST(Network, RejectsBadInputs) {
    ScoreNetwork net(desk(), 1);
    const TokenGrid wrong(3, 8, 8, 0);
    const double sb = 0.5;
    const ConditionBundle none;
    EXPECT_THROW(net.forward(std::span(&wrong, 1), std::span(&sb, 1), std::span(&none, 1)), std::invalid_argument);
    ConditionBundle bad;
    bad.emo = std::vector<int>{0, 99};
    const TokenGrid g = TokenGrid::all_masked(4, 8, 8);
    EXPECT_THROW(net.forward(std::span(&g, 1), std::span(&sb, 1), std::span(&bad, 1)), std::out_of_range);
}

TEST(Network, RoutingChecksPass) {
    for (auto v : {NetworkVariant::hierarchical, NetworkVariant::single_scale}) {
        NetworkConfig c = desk();
        c.variant = v;
        for (const auto& chk : verify_routing(c)) {
            EXPECT_TRUE(chk.passed) << to_string(v) << " " << chk.name << ": " << chk.detail;
        }
    }
}

TEST(Network, FlatVariantMixesEmotionIntoLowLevels) {
    NetworkConfig c = desk();
    c.variant = NetworkVariant::flat;
    ScoreNetwork net(c, 2);
    net.randomize(3);
    Rng rng = make_rng(4);
    const TokenGrid x = random_noisy_grid(c, rng);
    ConditionBundle b = random_bundle(c, rng);
    const double sb = 0.5;
    const auto a = net.forward(std::span(&x, 1), std::span(&sb, 1), std::span(&b, 1));
    for (auto& e : *b.emo) e = (e + 1) % c.emo_classes;
    const auto o = net.forward(std::span(&x, 1), std::span(&sb, 1), std::span(&b, 1));
    EXPECT_FALSE(a.logits[0] == o.logits[0]);
}

TEST(GradientCheck, TinyAndC8L4) {
    NetworkConfig c = desk();
    c.channels = 8;
    c.heads = 2;
    c.frames = 4;
    c.emotion_downsample = 2;
    ScoreNetwork net(c, 2);
    net.randomize(5);
    const auto r = gradient_check(net, 6, 2, 0);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param;
    EXPECT_GT(r.checked, 5000u);
}

TEST(GradientCheck, AllVerifyChecksPass) {
    for (const auto& chk : verify_gradients(desk())) EXPECT_TRUE(chk.passed) << chk.name << ": " << chk.detail;
}

TEST(IdentityAdapter, ShapeAndDeterminism) {
    ScoreNetwork net(desk(), 1);
    nn::Mat faces = nn::Mat::Ones(5, desk().face_dim);
    const nn::Mat a = net.predict_identity(faces);
    EXPECT_EQ(a.rows(), 5);
    EXPECT_EQ(a.cols(), desk().id_dim);
    EXPECT_EQ(a, net.predict_identity(faces));
}

TEST(Checkpoint, RoundTripIsBitwise) {
    for (auto v : {NetworkVariant::hierarchical, NetworkVariant::flat, NetworkVariant::single_scale}) {
        NetworkConfig c = desk();
        c.variant = v;
        ScoreNetwork net(c, 7);
        net.randomize(8);
        NoiseSchedule s;
        s.eps = 2e-3;
        std::stringstream ss;
        write_checkpoint(ss, net, s);
        NoiseSchedule back_s;
        const ScoreNetwork back = read_checkpoint(ss, &back_s);
        EXPECT_EQ(back.config(), net.config());
        EXPECT_TRUE(back.parameters() == net.parameters());
        EXPECT_EQ(back_s.eps, 2e-3);
    }
}

TEST(Checkpoint, RejectsCorruption) {
    ScoreNetwork net(desk(), 1);
    std::stringstream ss;
    write_checkpoint(ss, net, NoiseSchedule{});
    std::string bytes = ss.str();
    std::stringstream cut(bytes.substr(0, bytes.size() / 2));
    EXPECT_THROW(read_checkpoint(cut), std::runtime_error);
    bytes[0] = 'X';
    std::stringstream bad(bytes);
    EXPECT_THROW(read_checkpoint(bad), std::runtime_error);
}
