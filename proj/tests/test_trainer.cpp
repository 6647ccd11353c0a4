#include <gtest/gtest.h>

#include <random>

#include "mti/dataset.hpp"
#include "mti/trainer.hpp"
#include "test_util.hpp"

using namespace mti;
using train::StopReason;

namespace {

train::LossCurve flat_curve(int epochs, double l1) {
    train::LossCurve c;
    for (int e = 1; e <= epochs; ++e) c.push_back({e, l1, 1.0, 1.0, 0.0});
    return c;
}

/// cGAN curve whose last `wins` transitions have falling disc loss and rising
/// generator loss; earlier epochs are flat.
train::LossCurve disc_win_curve(int epochs, int wins) {
    train::LossCurve c = flat_curve(epochs, 0.2);
    for (int i = epochs - wins; i < epochs; ++i) {
        const int k = i - (epochs - wins) + 1;
        c[i].disc_loss = 1.0 - 0.01 * k;
        c[i].gen_adv = 1.0 + 0.01 * k;
    }
    return c;
}

train::TrainConfig cgan_config() {
    train::TrainConfig t;
    t.method = train::Method::cgan;
    return t;
}

std::vector<data::SliceSample> identity_samples(int n, int size, std::uint64_t seed) {
    const auto v = data::stretch_intensity(data::make_phantom("p", n, size, seed));
    std::vector<data::SliceSample> out;
    for (int z = 0; z < n; ++z) {
        const auto img = RgbImage::replicate(v.modality(Modality::flair).slice(z), 3);
        out.push_back({img, {img}, {"p", z, 0, 0, "x", {"bias_correct"}}});
    }
    return out;
}

nets::NetworkConfig small_net() {
    auto c = nets::toy_config(1);
    c.slice_size = 16;
    return c;
}

}  // namespace

TEST(L1Loss, Definitions) {
    const std::vector<float> a{0.1f, -0.4f, 0.9f, 0.0f};
    EXPECT_EQ(train::l1_loss<float>(a, a), 0.0);
    std::vector<float> shifted(a);
    for (float& v : shifted) v += 0.5f;
    EXPECT_NEAR(train::l1_loss<float>(shifted, a), 0.5, 1e-7);
    EXPECT_THROW(train::l1_loss<float>(a, std::vector<float>(3)), Error);
}

TEST(L1Loss, MatchesElementwiseMean) {
    std::mt19937 rng(1);
    std::uniform_real_distribution<double> u(-1, 1);
    Tensor<double> p(1, 4, 4, 1), t(1, 4, 4, 1);
    double sum = 0;
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            p(0, y, x, 0) = u(rng);
            t(0, y, x, 0) = u(rng);
            sum += std::abs(p(0, y, x, 0) - t(0, y, x, 0));
        }
    EXPECT_NEAR(train::l1_loss(p, t), sum / 16, 1e-15);
}

TEST(CganLoss, PerfectFoolingAndExactPredictionIsZero) {
    const std::vector<double> ones(4, 1.0), img{0.2, 0.4, -0.1, 0.0};
    EXPECT_NEAR(train::cgan_generator_loss<double>(ones, img, img, 10.0), 0.0, 1e-12);
}

TEST(CganLoss, ZeroWeightLeavesAdversarialTerm) {
    const std::vector<double> s{0.5, 0.25}, a{0, 0}, b{1, 1};
    const double bce = -(std::log(0.5) + std::log(0.25)) / 2;
    EXPECT_NEAR(train::cgan_generator_loss<double>(s, a, b, 0.0), bce, 1e-12);
}

TEST(CganLoss, HandComputedValue) {
    const std::vector<double> s{0.8, 0.6}, p{0.0, 0.5}, t{0.2, 0.1};
    const double expected = -(std::log(0.8) + std::log(0.6)) / 2 + 10 * (0.2 + 0.4) / 2;
    EXPECT_NEAR(train::cgan_generator_loss<double>(s, p, t, 10.0), expected, 1e-12);
    const std::vector<double> bad{std::nan("")};
    EXPECT_THROW(train::cgan_generator_loss<double>(bad, p, p, 10.0), Error);
}

TEST(BceWithLogits, MatchesProbabilityForm) {
    Tensor<double> z(1, 1, 3, 1);
    z.values()[0] = -2, z.values()[1] = 0.3, z.values()[2] = 4;
    std::vector<double> probs;
    for (double v : z.values()) probs.push_back(1 / (1 + std::exp(-v)));
    Tensor<double> g;
    EXPECT_NEAR(train::bce_with_logits(z, 1.0, &g), train::bce<double>(probs, 1.0), 1e-12);
    EXPECT_NEAR(train::bce_with_logits<double>(z, 0.0, nullptr), train::bce<double>(probs, 0.0), 1e-12);
    EXPECT_NEAR(g.values()[1], (probs[1] - 1) / 3, 1e-12);
}

TEST(StopRule, EarlyStopAtThresholdCrossing) {
    auto c = flat_curve(50, 0.02);
    c[48].gen_l1 = 0.011;
    c[49].gen_l1 = 0.009;
    train::TrainConfig t;
    EXPECT_EQ(train::check_stop(c, t), (train::StopDecision{StopReason::early_stop, 50}));
    c.pop_back();
    EXPECT_EQ(train::check_stop(c, t), std::nullopt);
    c.back().gen_l1 = 0.01;  // inclusive
    EXPECT_EQ(train::check_stop(c, t)->reason, StopReason::early_stop);
}

TEST(StopRule, DiscriminatorForceNeedsExactlyTenTransitions) {
    const auto t = cgan_config();
    EXPECT_EQ(train::check_stop(disc_win_curve(11, 10), t),
              (train::StopDecision{StopReason::discriminator_force, 11}));
    EXPECT_EQ(train::check_stop(disc_win_curve(30, 10), t),
              (train::StopDecision{StopReason::discriminator_force, 30}));
    EXPECT_EQ(train::check_stop(disc_win_curve(30, 9), t), std::nullopt);
    EXPECT_EQ(train::check_stop(disc_win_curve(10, 9), t), std::nullopt);

    // a single tie breaks the run
    auto tie = disc_win_curve(30, 10);
    tie[25].disc_loss = tie[24].disc_loss;
    EXPECT_EQ(train::check_stop(tie, t), std::nullopt);

    // U-Net sessions never force-stop on the discriminator
    train::TrainConfig unet;
    EXPECT_EQ(train::check_stop(disc_win_curve(30, 10), unet), std::nullopt);
}

TEST(StopRule, MaxEpochForceAfterStuckLoss) {
    train::TrainConfig t;
    train::LossCurve c;
    for (int e = 1; e <= 500; ++e) {
        c.push_back({e, 0.2, 0, 0, 0});
        const auto d = train::check_stop(c, t);
        if (e < 500) ASSERT_EQ(d, std::nullopt) << "epoch " << e;
        else EXPECT_EQ(d, (train::StopDecision{StopReason::max_epoch_force, 500}));
    }
}

TEST(StopRule, PriorityIsEarlyThenDiscriminatorThenCap) {
    auto t = cgan_config();
    t.max_epochs = 30;
    auto c = disc_win_curve(30, 10);
    EXPECT_EQ(train::check_stop(c, t)->reason, StopReason::discriminator_force);
    c.back().gen_l1 = 0.005;
    c.back().gen_adv = 50;  // keeps the generator total rising
    EXPECT_EQ(train::check_stop(c, t)->reason, StopReason::early_stop);
}

TEST(StopRule, PureFunctionOfCurveAndConfig) {
    const auto c = disc_win_curve(20, 10);
    EXPECT_EQ(train::check_stop(c, cgan_config()), train::check_stop(c, cgan_config()));
    EXPECT_THROW(train::check_stop({}, cgan_config()), Error);
}

TEST(TrainSession, SameSeedGivesIdenticalCurves) {
    const auto samples = identity_samples(3, 16, 2);
    train::TrainConfig t;
    t.max_epochs = 3;
    t.batch_size = 2;
    t.seed = 4;
    for (auto m : {train::Method::unet, train::Method::cgan}) {
        t.method = m;
        const auto a = train::train_session(samples, small_net(), t);
        const auto b = train::train_session(samples, small_net(), t);
        ASSERT_EQ(a.curve.size(), 3u);
        EXPECT_EQ(a.stop, (train::StopDecision{StopReason::max_epoch_force, 3}));
        for (std::size_t i = 0; i < a.curve.size(); ++i) {
            EXPECT_EQ(a.curve[i].gen_l1, b.curve[i].gen_l1);
            EXPECT_EQ(a.curve[i].disc_loss, b.curve[i].disc_loss);
            EXPECT_EQ(a.curve[i].epoch, static_cast<int>(i) + 1);
            if (m == train::Method::cgan) {
                EXPECT_GT(a.curve[i].gen_adv, 0);
                EXPECT_GT(a.curve[i].disc_loss, 0);
            }
        }
    }
}

TEST(TrainSession, IdentityLossFallsOverFiftyEpochs) {
    const auto samples = identity_samples(4, 16, 3);
    train::TrainConfig t;
    t.max_epochs = 50;
    t.batch_size = 2;
    t.learning_rate = 2e-3;
    const auto r = train::train_session(samples, small_net(), t);
    ASSERT_EQ(static_cast<int>(r.curve.size()), r.stop.epoch);
    auto smoothed = [&](std::size_t end) {
        double s = 0;
        const std::size_t begin = end >= 5 ? end - 5 : 0;
        for (std::size_t i = begin; i < end; ++i) s += r.curve[i].gen_l1;
        return s / static_cast<double>(end - begin);
    };
    EXPECT_LT(smoothed(r.curve.size()), r.curve.front().gen_l1);
    if (r.stop.reason == StopReason::early_stop) EXPECT_LE(r.curve.back().gen_l1, t.early_stop_l1);
}

TEST(TrainSession, RejectsEmptyAndMismatchedInput) {
    train::TrainConfig t;
    EXPECT_THROW(train::train_session({}, small_net(), t), Error);
    EXPECT_THROW(train::train_session(identity_samples(1, 16, 1), nets::toy_config(2), t), Error);
}

TEST(TrainSession, NonFiniteInputAbortsWithDiagnostic) {
    auto samples = identity_samples(2, 16, 1);
    samples[0].input.values()[0] = std::nanf("");
    train::TrainConfig t;
    t.max_epochs = 2;
    try {
        train::train_session(samples, small_net(), t);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
    }
}

TEST(LossCurve, CsvRoundTrip) {
    TempDir dir;
    const train::LossCurve c{{1, 0.5, 0.7, 0.6, 1.5}, {2, 0.25, 0.75, 0.5, 1.25}};
    train::write_curve_csv(dir / "c.csv", c);
    const auto back = train::read_curve_csv(dir / "c.csv");
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[1].epoch, 2);
    EXPECT_DOUBLE_EQ(back[1].gen_l1, 0.25);
    EXPECT_DOUBLE_EQ(back[0].disc_loss, 0.6);
    std::ifstream in(dir / "c.csv");
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header.rfind("epoch,gen_l1,gen_adv,disc_loss", 0), 0u);
}
