#include "nndm/data.hpp"
#include "nndm/errors.hpp"
#include "nndm/segmentation.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace nndm;

namespace {

SegmentationConfig small_config(int hw = 32) {
    SegmentationConfig c;
    c.in_channels = 2;
    c.mask_channels = 1;
    c.depth = 3;
    c.base_width = 8;
    c.input_hw = hw;
    return c;
}

std::vector<LabeledCase> phantom_cases(int n, int hw, std::uint64_t seed) {
    std::vector<LabeledCase> out;
    for (auto& c : generate_phantoms(n, hw, seed, 0.25)) {
        out.push_back({c.volume, c.mask});
    }
    return out;
}

Tensor single(float v) { return Tensor({1, 1, 1}, v); }

}  // namespace

TEST(BuildModel, DeterministicFromSeed) {
    EXPECT_EQ(build_model(small_config(), 5), build_model(small_config(), 5));
    EXPECT_FALSE(build_model(small_config(), 5) == build_model(small_config(), 6));
}

TEST(BuildModel, ShapeContractAtDeskScale) {
    SegmentationConfig config;
    config.depth = 3;
    config.base_width = 16;
    config.input_hw = 64;
    const auto model = build_model(config, 1);
    const auto cases = generate_phantoms(1, 64, 3, 0.25);
    const PredictedMask p = predict(model, cases[0].volume);
    EXPECT_EQ(p.tensor().shape(), (std::vector<std::size_t>{1, 64, 64}));
    for (float v : p.tensor().values()) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(BuildModel, RejectsDepthBeyondSpatialExtent) {
    SegmentationConfig config = small_config(16);
    config.depth = 5;  // log2(16) = 4
    EXPECT_THROW(build_model(config, 1), ConfigError);
    config.depth = 0;
    EXPECT_THROW(build_model(config, 1), ConfigError);
    config.depth = 2;
    config.base_width = 0;
    EXPECT_THROW(build_model(config, 1), ConfigError);
}

TEST(Predict, DeterministicAndChannelChecked) {
    const auto model = build_model(small_config(), 2);
    const auto cases = generate_phantoms(1, 32, 4, 0.25);
    EXPECT_EQ(predict(model, cases[0].volume), predict(model, cases[0].volume));
    EXPECT_THROW(predict(model, InputVolume(Tensor({3, 32, 32}))), ConfigError);
}

TEST(Predict, RangeHoldsForHugeInputs) {
    const auto model = build_model(small_config(), 2);
    for (float magnitude : {1e3f, -1e3f}) {
        Tensor x({2, 32, 32});
        Rng rng(9);
        for (float& v : x.values()) {
            v = magnitude * static_cast<float>(rng.uniform());
        }
        const PredictedMask p = predict(model, InputVolume(x));
        for (float v : p.tensor().values()) {
            ASSERT_GE(v, 0.0f);
            ASSERT_LE(v, 1.0f);
        }
    }
}

TEST(DiceCeLoss, PerfectPrediction) {
    Tensor g({1, 4, 4});
    for (std::size_t i = 0; i < g.size(); i += 3) g[i] = 1.0f;
    EXPECT_NEAR(dice_ce_loss(PredictedMask(g), GroundTruthMask(g)), 0.0, 1e-5);
}

TEST(DiceCeLoss, HandComputedSinglePixel) {
    EXPECT_NEAR(dice_ce_loss(PredictedMask(single(0.5f)), GroundTruthMask(single(1.0f))), 0.893147, 1e-5);
    const std::vector<double> p{1e-7};
    const std::vector<double> g{1.0};
    EXPECT_NEAR(dice_ce_loss(p, g, 1), 17.118094, 1e-5);
}

TEST(DiceCeLoss, BothEmptyHasNoDicePenalty) {
    const std::vector<double> p(16, 0.0);
    const std::vector<double> g(16, 0.0);
    // only the clamped CE term remains: -log(1 - 1e-7)
    EXPECT_NEAR(dice_ce_loss(p, g, 1), -std::log(1.0 - 1e-7), 1e-12);
}

TEST(DiceCeLoss, Errors) {
    EXPECT_THROW(dice_ce_loss(PredictedMask(Tensor({1, 2, 2})), GroundTruthMask(Tensor({1, 2, 3}))), ConfigError);
    const std::vector<double> p{0.5, 0.5};
    const std::vector<double> g{0.5, 1.0};
    EXPECT_THROW(dice_ce_loss(p, g, 1), DataError);
    EXPECT_THROW(GroundTruthMask(single(0.3f)), DataError);
}

TEST(DiceCeLoss, LowerBoundAndChannelAveraging) {
    Rng rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> p(32);
        std::vector<double> g(32);
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] = rng.uniform();
            g[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
        }
        const double two = dice_ce_loss(p, g, 2);
        EXPECT_GE(two, -1.0);
        const double first = dice_ce_loss(std::span(p).first(16), std::span(g).first(16), 1);
        const double second = dice_ce_loss(std::span(p).last(16), std::span(g).last(16), 1);
        EXPECT_NEAR(two, 0.5 * (first + second), 1e-12);
    }
}

TEST(DiceCeLoss, GradientMatchesCentralDifferences) {
    Rng rng(33);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<double> p(64);
        std::vector<double> g(64);
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] = 0.02 + 0.96 * rng.uniform();
            g[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
        }
        std::vector<double> grad(64);
        dice_ce_loss(p, g, 1, grad);
        for (std::size_t i = 0; i < p.size(); ++i) {
            auto q = p;
            q[i] = p[i] + 1e-5;
            const double up = dice_ce_loss(q, g, 1);
            q[i] = p[i] - 1e-5;
            const double down = dice_ce_loss(q, g, 1);
            const double numeric = (up - down) / 2e-5;
            EXPECT_LT(std::abs(numeric - grad[i]) / std::max(std::abs(numeric), 1e-12), 1e-4);
        }
    }
}

TEST(TotalLoss, Weighting) {
    EXPECT_EQ(total_loss(0.2, 0.3, 0.0), 0.2);
    EXPECT_NEAR(total_loss(0.2, 0.3, 1.0), 0.5, 1e-15);
    EXPECT_NEAR(total_loss(0.2, 0.3, 0.5), 0.35, 1e-15);
    EXPECT_THROW(total_loss(0.2, 0.3, -0.1), ConfigError);
    // linear in l_diff with slope lambda
    for (double l : {0.0, 0.25, 1.5}) {
        EXPECT_NEAR(total_loss(1.0, 2.0, l) - total_loss(1.0, 1.0, l), l, 1e-12);
    }
}

TEST(TrainEpoch, ZeroLearningRateKeepsParameters) {
    auto model = build_model(small_config(), 1);
    const auto before = model;
    const auto data = phantom_cases(6, 32, 2);
    nn::Adam adam(model.network().params());
    Rng rng(3);
    const double loss = train_epoch(model, data, adam, {0.0, 4}, rng);
    EXPECT_TRUE(std::isfinite(loss));
    EXPECT_GT(loss, 0.0);
    EXPECT_EQ(model, before);
}

TEST(TrainEpoch, DeterministicForSeed) {
    const auto data = phantom_cases(6, 32, 2);
    auto run = [&] {
        auto model = build_model(small_config(), 1);
        nn::Adam adam(model.network().params());
        Rng rng(8);
        for (int e = 0; e < 2; ++e) {
            train_epoch(model, data, adam, {1e-3, 4}, rng);
        }
        return model;
    };
    EXPECT_EQ(run(), run());
}

TEST(TrainEpoch, EmptyDatasetRejected) {
    auto model = build_model(small_config(), 1);
    nn::Adam adam(model.network().params());
    Rng rng(3);
    EXPECT_THROW(train_epoch(model, {}, adam, {}, rng), DataError);
}

TEST(TrainEpoch, SmoothedLossCurveIsNonincreasing) {
    const auto data = phantom_cases(40, 32, 12);
    auto model = build_model(small_config(), 4);
    nn::Adam adam(model.network().params());
    Rng rng(5);
    std::vector<double> losses;
    for (int e = 0; e < 30; ++e) {
        losses.push_back(train_epoch(model, data, adam, {1e-4, 8}, rng));
    }
    std::vector<double> smooth;
    for (std::size_t e = 4; e < losses.size(); ++e) {
        double s = 0.0;
        for (std::size_t k = e - 4; k <= e; ++k) s += losses[k];
        smooth.push_back(s / 5.0);
    }
    for (std::size_t k = 1; k < smooth.size(); ++k) {
        EXPECT_LE(smooth[k], smooth[k - 1]) << "window ending at epoch " << k + 4;
    }
    EXPECT_LT(losses.back(), 0.5 * losses.front());
}
