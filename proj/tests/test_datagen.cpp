#include <gtest/gtest.h>

#include <filesystem>

#include "mtspine/datagen.hpp"
#include "mtspine/dataset_io.hpp"

using namespace mtspine;

TEST(LabelBijection, ExhaustiveRoundTrip) {
    for (int bq = 0; bq < 4; ++bq) EXPECT_EQ(recompose_label(decompose_label(bq)), bq);
    EXPECT_EQ(decompose_label(BqMixed).blastic, 1);
    EXPECT_EQ(decompose_label(BqMixed).lytic, 1);
    EXPECT_EQ(decompose_label(BqNormal).blastic, 0);
    EXPECT_EQ(decompose_label(BqNormal).lytic, 0);
    EXPECT_THROW(decompose_label(4), std::invalid_argument);
}

TEST(Phantoms, EmptySpecGivesEmptyList) {
    PhantomSpec spec;
    EXPECT_TRUE(generate_phantoms(spec).samples.empty());
}

TEST(Phantoms, DeterministicPerSeed) {
    PhantomSpec spec = PhantomSpec::balanced(7, 3);
    spec.label_noise_rate = 0.1;
    PhantomSet a = generate_phantoms(spec);
    PhantomSet b = generate_phantoms(spec);
    ASSERT_EQ(a.samples.size(), b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        EXPECT_EQ(a.samples[i].image.data, b.samples[i].image.data);
        EXPECT_EQ(a.samples[i].bq_label, b.samples[i].bq_label);
        EXPECT_EQ(a.samples[i].vertebra_id, b.samples[i].vertebra_id);
    }
}

TEST(Phantoms, HuRangeRespected) {
    PhantomSet set = generate_phantoms(PhantomSpec::balanced(1, 2));
    for (const auto& s : set.samples)
        for (double v : s.image.data) {
            EXPECT_GE(v, kHuMin);
            EXPECT_LE(v, kHuMax);
        }
}

TEST(Phantoms, CountGuardThrows) {
    PhantomSpec spec = PhantomSpec::balanced(0, 100);
    spec.max_total = 10;
    EXPECT_THROW(generate_phantoms(spec), std::invalid_argument);
}

TEST(Phantoms, LabelNoiseFractionWithinBinomialBound) {
    PhantomSpec spec = PhantomSpec::balanced(3, 84);  // ~1000 slices
    spec.label_noise_rate = 0.2;
    PhantomSet set = generate_phantoms(spec);
    long corrupted = 0;
    for (std::size_t i = 0; i < set.samples.size(); ++i)
        if (set.samples[i].bq_label != set.clean_bq[i]) ++corrupted;
    const double frac = static_cast<double>(corrupted) / static_cast<double>(set.samples.size());
    EXPECT_GE(frac, 0.17);
    EXPECT_LE(frac, 0.23);
}

// Handcrafted two-statistic classifier on noise-free phantoms. Its accuracy
// bound is what justifies the end-to-end learning thresholds.
TEST(Phantoms, SeparabilityOracle) {
    PhantomSpec spec = PhantomSpec::balanced(5, 25);
    spec.noise_std = 0.0;
    PhantomSet set = generate_phantoms(spec);
    const auto geom = PhantomGeometry::of(spec.height, spec.width);
    long correct = 0;
    for (const auto& s : set.samples) {
        long bone = 0, bright = 0, dark = 0;
        for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x) {
                if (!geom.inside(x, y)) continue;
                ++bone;
                const double hu = s.image.data[static_cast<std::size_t>(y) * spec.width + x];
                if (hu > 700.0) ++bright;
                if (hu < 100.0) ++dark;
            }
        const double bright_frac = static_cast<double>(bright) / bone;
        const double dark_frac = static_cast<double>(dark) / bone;
        int pred;
        if (bright_frac >= 0.01 && dark_frac >= 0.01) pred = BqMixed;
        else if (bright_frac >= 0.01) pred = BqBlastic;
        else if (dark_frac >= 0.01) pred = BqLytic;
        else pred = BqNormal;
        if (pred == s.bq_label) ++correct;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(set.samples.size());
    EXPECT_GE(acc, 0.95);
}

TEST(ThresholdCrop, AllAirFallsBackToCenterCrop) {
    Tensor img = Tensor::full({16, 16}, -1000.0);
    Tensor out = threshold_crop(img, 150.0, 8, 8);
    EXPECT_EQ(out.shape, (std::vector<int>{8, 8}));
    for (double v : out.data) EXPECT_DOUBLE_EQ(v, out.data[0]);
}

TEST(ThresholdCrop, SingleBrightPixelCentersWindow) {
    // bright pixel at (10,10) in a 32x32 image of air; 8x8 window centered
    // there fits without clamping: rows/cols 6..13
    Tensor img = Tensor::full({32, 32}, -1000.0);
    img.data[10 * 32 + 10] = 500.0;
    Tensor out = threshold_crop(img, 150.0, 8, 8);
    const double bright = (500.0 - kHuMin) / (kHuMax - kHuMin);
    EXPECT_NEAR(out.data[4 * 8 + 4], bright, 1e-12);  // (10-6, 10-6)
    // clamping when the component hugs a corner
    Tensor corner = Tensor::full({32, 32}, -1000.0);
    corner.data[1 * 32 + 1] = 500.0;
    Tensor out2 = threshold_crop(corner, 150.0, 8, 8);
    EXPECT_NEAR(out2.data[1 * 8 + 1], bright, 1e-12);
}

TEST(ThresholdCrop, LargestComponentWins) {
    // a 3-pixel blob to the right should outrank a stray bright pixel
    Tensor img = Tensor::full({16, 32}, 0.0);
    img.data[2 * 32 + 2] = 400.0;
    for (int x = 24; x < 27; ++x) img.data[8 * 32 + x] = 400.0;
    Tensor out = threshold_crop(img, 150.0, 8, 8);
    // window centered at (8,25) -> x0 = 21; bright pixels land at row 4
    const double bright = (400.0 - kHuMin) / (kHuMax - kHuMin);
    EXPECT_NEAR(out.data[4 * 8 + (24 - 21)], bright, 1e-12);
}

TEST(ThresholdCrop, OutputAlwaysNormalized) {
    PhantomSet set = generate_phantoms(PhantomSpec::balanced(2, 2));
    for (const auto& s : set.samples) {
        Tensor out = threshold_crop(s.image, 150.0, 32, 32);
        EXPECT_EQ(out.shape, (std::vector<int>{32, 32}));
        for (double v : out.data) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(BalanceSubsample, CapsAboveCountsLeaveInputUnchanged) {
    PhantomSet set = generate_phantoms(PhantomSpec::balanced(3, 4));
    auto out = balance_subsample(set.samples, 1000, 0);
    EXPECT_EQ(out.size(), set.samples.size());
}

TEST(BalanceSubsample, CapsEachClass) {
    PhantomSpec spec;
    spec.counts[BqNormal][PiNone] = 100;
    spec.counts[BqLytic][PiNone] = 10;
    auto set = generate_phantoms(spec);
    auto out = balance_subsample(set.samples, 10, 3);
    long counts[4] = {0, 0, 0, 0};
    for (const auto& s : out) ++counts[s.bq_label];
    EXPECT_EQ(counts[BqNormal], 10);
    EXPECT_EQ(counts[BqLytic], 10);
}

TEST(BalanceSubsample, DeterministicPerSeed) {
    auto set = generate_phantoms(PhantomSpec::balanced(9, 20));
    auto a = balance_subsample(set.samples, 5, 17);
    auto b = balance_subsample(set.samples, 5, 17);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].vertebra_id, b[i].vertebra_id);
}

TEST(DatasetIo, RoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "mtspine_ds_test";
    std::filesystem::remove_all(dir);
    auto set = generate_phantoms(PhantomSpec::balanced(4, 2));
    save_dataset(dir, set.samples);
    auto loaded = load_dataset(dir);
    ASSERT_EQ(loaded.size(), set.samples.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        EXPECT_EQ(loaded[i].bq_label, set.samples[i].bq_label);
        EXPECT_EQ(loaded[i].pi_label, set.samples[i].pi_label);
        EXPECT_EQ(loaded[i].patient_id, set.samples[i].patient_id);
        EXPECT_EQ(loaded[i].vertebra_id, set.samples[i].vertebra_id);
        // images round-trip through f32
        for (std::size_t j = 0; j < loaded[i].image.numel(); ++j)
            EXPECT_NEAR(loaded[i].image.data[j], set.samples[i].image.data[j], 1e-3);
    }
    std::filesystem::remove_all(dir);
}

TEST(DatasetIo, RejectsBadMagic) {
    const auto dir = std::filesystem::temp_directory_path() / "mtspine_badmagic";
    std::filesystem::create_directories(dir);
    {
        std::ofstream os(dir / "bad.mtsl", std::ios::binary);
        os << "NOTM0000";
    }
    EXPECT_THROW(load_slice(dir / "bad.mtsl"), std::runtime_error);
    std::filesystem::remove_all(dir);
}
