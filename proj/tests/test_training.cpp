#include <gtest/gtest.h>

#include <cmath>

#include "mtspine/datagen.hpp"
#include "mtspine/training.hpp"

using namespace mtspine;

namespace {

ModelConfig tiny_config(SharingMode mode = SharingMode::HardAll) {
    ModelConfig c;
    c.block_layers = {1, 1, 1, 1};
    c.growth_rate = 4;
    c.input_h = c.input_w = 16;
    c.sharing = mode;
    return c;
}

TrainConfig quick_train(int epochs, unsigned seed = 0) {
    TrainConfig t;
    t.epochs = epochs;
    t.warmup_epochs = std::min(2, epochs > 0 ? epochs - 1 : 0);
    t.seed = seed;
    return t;
}

std::vector<SliceSample> tiny_dataset(unsigned seed, int per_cell = 2) {
    PhantomSpec spec = PhantomSpec::balanced(seed, per_cell, 32, 32);
    return generate_phantoms(spec).samples;
}

}  // namespace

TEST(LrSchedule, WarmupRamp) {
    TrainConfig c;
    c.warmup_epochs = 5;
    c.epochs = 50;
    EXPECT_DOUBLE_EQ(lr_at(0, c), c.base_lr / 5.0);
    EXPECT_DOUBLE_EQ(lr_at(4, c), c.base_lr);
}

TEST(LrSchedule, CosinePhaseZeroEqualsBase) {
    TrainConfig c;
    c.warmup_epochs = 5;
    c.epochs = 50;
    EXPECT_DOUBLE_EQ(lr_at(5, c), c.base_lr);
}

TEST(LrSchedule, FinalEpochValue) {
    TrainConfig c;
    c.warmup_epochs = 5;
    c.epochs = 50;
    const double expected = 0.5 * c.base_lr * (1.0 + std::cos(M_PI * 44.0 / 45.0));
    EXPECT_DOUBLE_EQ(lr_at(49, c), expected);
    EXPECT_NEAR(expected / c.base_lr, 0.00122, 5e-5);
}

TEST(LrSchedule, ContinuousAtWarmupBoundary) {
    TrainConfig c;
    c.warmup_epochs = 7;
    c.epochs = 40;
    EXPECT_DOUBLE_EQ(lr_at(c.warmup_epochs - 1, c), lr_at(c.warmup_epochs, c));
}

TEST(LrSchedule, OutOfRangeRejected) {
    TrainConfig c;
    EXPECT_THROW(lr_at(-1, c), std::invalid_argument);
    EXPECT_THROW(lr_at(c.epochs, c), std::invalid_argument);
}

TEST(SgdStep, PlainSgdWithoutMomentum) {
    Network net = Network::build(tiny_config(), 0);
    Tensor& w = net.params.at("head_pi.b");
    const std::vector<double> before = w.data;
    w.ensure_grad();
    for (double& g : w.grad) g = 2.0;
    VelocityState vel;
    sgd_step(net, vel, 0.1, 0.0);
    for (std::size_t i = 0; i < w.numel(); ++i) EXPECT_DOUBLE_EQ(w.data[i], before[i] - 0.2);
}

TEST(SgdStep, ZeroGradLeavesParamsUnchanged) {
    Network net = Network::build(tiny_config(), 0);
    const auto before = net.params;
    net.zero_grads();
    for (auto& [name, t] : net.params) t.ensure_grad();
    VelocityState vel;
    for (int i = 0; i < 5; ++i) sgd_step(net, vel, 0.1, 0.9);
    for (const auto& [name, t] : net.params) EXPECT_EQ(t.data, before.at(name).data) << name;
}

TEST(SgdStep, NanGradientRejected) {
    Network net = Network::build(tiny_config(), 0);
    Tensor& w = net.params.at("head_pi.b");
    w.ensure_grad();
    w.grad[0] = std::numeric_limits<double>::quiet_NaN();
    VelocityState vel;
    EXPECT_THROW(sgd_step(net, vel, 0.1, 0.9), std::runtime_error);
}

// Quadratic bowl f(w) = 0.5*||w||^2 with lr=0.1, momentum=0.9. The iterate
// norm oscillates (complex eigenvalues, |lambda| ~ 0.949), so the decaying
// quantity is the envelope: the max norm over trailing windows shrinks and
// the iterate converges below 1e-6.
TEST(SgdStep, QuadraticBowlConvergence) {
    Tensor w({4}, {1.0, -2.0, 0.5, 3.0});
    std::vector<double> vel(4, 0.0);
    std::vector<double> norms;
    for (int step = 0; step < 400; ++step) {
        for (std::size_t i = 0; i < 4; ++i) {
            vel[i] = 0.9 * vel[i] + w.data[i];
            w.data[i] -= 0.1 * vel[i];
        }
        double norm = 0.0;
        for (double v : w.data) norm += v * v;
        norms.push_back(std::sqrt(norm));
    }
    auto window_max = [&](int begin) {
        double m = 0.0;
        for (int i = begin; i < begin + 50; ++i) m = std::max(m, norms[i]);
        return m;
    };
    for (int begin = 50; begin + 100 <= 400; begin += 50)
        EXPECT_LT(window_max(begin + 50), window_max(begin));
    EXPECT_LT(norms.back(), 1e-6);
}

TEST(Train, ZeroEpochsReturnsInitialNetwork) {
    auto data = tiny_dataset(0);
    TrainConfig cfg = quick_train(0);
    TrainResult r = train(data, tiny_config(), cfg);
    EXPECT_TRUE(r.log.records.empty());
    Network fresh = Network::build(tiny_config(), cfg.seed);
    for (const auto& [name, t] : fresh.params) EXPECT_EQ(t.data, r.net.params.at(name).data);
}

TEST(Train, SplDisabledSelectsEverything) {
    auto data = tiny_dataset(1);
    TrainResult r = train(data, tiny_config(), quick_train(2));
    ASSERT_EQ(r.log.records.size(), 2u);
    for (const auto& rec : r.log.records) EXPECT_DOUBLE_EQ(rec.selected_fraction, 1.0);
}

TEST(Train, DeterministicLossTrajectory) {
    auto data = tiny_dataset(2);
    TrainConfig cfg = quick_train(3, 9);
    TrainResult a = train(data, tiny_config(), cfg);
    TrainResult b = train(data, tiny_config(), cfg);
    ASSERT_EQ(a.log.records.size(), b.log.records.size());
    for (std::size_t i = 0; i < a.log.records.size(); ++i)
        EXPECT_EQ(a.log.records[i].mean_selected_loss, b.log.records[i].mean_selected_loss);
}

TEST(Train, SplRecordsSelectionFraction) {
    auto data = tiny_dataset(3, 3);
    TrainConfig cfg = quick_train(4);
    cfg.spl_enabled = true;
    TrainResult r = train(data, tiny_config(), cfg);
    ASSERT_EQ(r.log.records.size(), 4u);
    // first SPL epoch selects roughly the start percentile
    EXPECT_GT(r.log.records[0].selected_fraction, 0.3);
    EXPECT_LT(r.log.records[0].selected_fraction, 0.9);
    // pace grows, so selection never collapses
    for (std::size_t i = 1; i < r.log.records.size(); ++i)
        EXPECT_GE(r.log.records[i].selected_fraction, r.log.records[0].selected_fraction - 1e-12);
}

// Selection uses strict loss < pace. With identical samples every loss ties
// the percentile pace exactly, so the first SPL epoch selects nothing and
// training must refuse to continue.
TEST(Train, SplFirstEpochDeselectingEverythingIsAnError) {
    auto one = tiny_dataset(4);
    std::vector<SliceSample> data(6, one.front());
    TrainConfig cfg = quick_train(2);
    cfg.spl_enabled = true;
    EXPECT_THROW(train(data, tiny_config(), cfg), std::runtime_error);
}

TEST(Train, SoftSharingModeRuns) {
    auto data = tiny_dataset(5);
    TrainConfig cfg = quick_train(1);
    cfg.soft_share.lambda = {1e-4, 1e-4, 1e-4, 1e-4};
    TrainResult r = train(data, tiny_config(SharingMode::Soft), cfg);
    EXPECT_EQ(r.log.records.size(), 1u);
    EXPECT_TRUE(std::isfinite(r.log.records[0].mean_selected_loss));
}

// Descent sanity on a convex toy problem: linear model, quadratic loss,
// full-batch step with small lr decreases the weighted loss.
TEST(Train, DescentDirectionOnConvexToy) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Tensor w({1, 3});
    for (double& v : w.data) v = dist(rng);
    Tensor x({4, 3});
    for (double& v : x.data) v = dist(rng);
    Tensor y({4, 1});
    for (double& v : y.data) v = dist(rng);
    // sample weights emulate an SPL selection mask
    Tensor mask({4, 1}, {1.0, 1.0, 0.0, 1.0});
    Tensor masked_y = y;
    for (std::size_t i = 0; i < 4; ++i) masked_y.data[i] *= mask.data[i];

    auto run = [&](Tensor& weights, bool do_step) {
        Graph g;
        int pred = g.linear(g.input(x), g.param(weights), g.input(Tensor::zeros({1})));
        int loss = g.sq_diff_sum(g.mul(pred, g.input(mask)), g.input(masked_y));
        if (do_step) {
            weights.zero_grad();
            g.backward(loss);
            for (std::size_t i = 0; i < weights.numel(); ++i)
                weights.data[i] -= 0.01 * weights.grad[i];
        }
        return g.value(loss).data[0];
    };
    const double before = run(w, true);
    const double after = run(w, false);
    EXPECT_LT(after, before);
}

TEST(TrainLog, CsvExportShape) {
    auto data = tiny_dataset(6);
    TrainResult r = train(data, tiny_config(), quick_train(2));
    const std::string csv = r.log.to_csv();
    EXPECT_NE(csv.find("epoch,lr,mean_selected_loss"), std::string::npos);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);  // header + 2 epochs
}
