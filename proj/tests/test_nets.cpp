#include <gtest/gtest.h>

#include <random>

#include "mtspine/gradcheck.hpp"
#include "mtspine/net.hpp"
#include "mtspine/objectives.hpp"

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

Tensor random_batch(const ModelConfig& c, int n, unsigned seed) {
    std::mt19937_64 rng(seed);
    return gradcheck_detail::random_tensor({n, c.in_channels, c.input_h, c.input_w}, rng, 0.0, 1.0);
}

}  // namespace

TEST(Build, RejectsBadSpatialSize) {
    ModelConfig c = tiny_config();
    c.input_h = 12;
    EXPECT_THROW(Network::build(c, 0), std::invalid_argument);
}

TEST(Build, PaperScaleConfigConstructs) {
    // topology only; no forward pass at this size in unit tests
    ModelConfig c = ModelConfig::paper_scale();
    EXPECT_EQ(c.block_layers, (std::array<int, 4>{6, 12, 24, 16}));
    EXPECT_EQ(c.growth_rate, 32);
    EXPECT_EQ(c.mlp_hidden, 10);
    Network net = Network::build(c, 0);
    EXPECT_GT(net.param_count(), 1000000u);
}

TEST(Build, DeterministicFromSeed) {
    ModelConfig c = tiny_config();
    Network a = Network::build(c, 42);
    Network b = Network::build(c, 42);
    ASSERT_EQ(a.params.size(), b.params.size());
    for (const auto& [name, t] : a.params) EXPECT_EQ(t.data, b.params.at(name).data) << name;
}

TEST(Build, ParamCountOrderingAcrossSharingModes) {
    const std::size_t hard_all = Network::build(tiny_config(SharingMode::HardAll), 0).param_count();
    const std::size_t hard_partial =
        Network::build(tiny_config(SharingMode::HardPartial), 0).param_count();
    const std::size_t soft = Network::build(tiny_config(SharingMode::Soft), 0).param_count();
    EXPECT_LT(hard_all, hard_partial);
    EXPECT_LT(hard_partial, soft);
}

TEST(Build, ChannelBookkeeping) {
    ModelConfig c;
    c.block_layers = {2, 2, 2, 2};
    c.growth_rate = 8;
    Network net = Network::build(c, 0);
    // stem 16; +16 -> 32; /2 -> 16; +16 -> 32; /2 -> 16; +16 -> 32; /2 -> 16; +16 -> 32
    EXPECT_EQ(net.final_channels(), 32);
    EXPECT_EQ(net.params.at("head_blastic.W").dim(1), 32);
}

TEST(Forward, LogitShapeContract) {
    for (SharingMode mode : {SharingMode::HardAll, SharingMode::HardPartial, SharingMode::Soft}) {
        ModelConfig c = tiny_config(mode);
        Network net = Network::build(c, 1);
        Graph g;
        ForwardOutput f = net.forward(g, g.input(random_batch(c, 2, 5)), RunMode::Train);
        EXPECT_EQ(g.value(f.blastic_logits).shape, (std::vector<int>{2, 2}));
        EXPECT_EQ(g.value(f.lytic_logits).shape, (std::vector<int>{2, 2}));
        EXPECT_EQ(g.value(f.pi_logits).shape, (std::vector<int>{2, 3}));
        EXPECT_EQ(g.value(f.bq_logits).shape, (std::vector<int>{2, 4}));
        for (int b = 0; b < 4; ++b) {
            EXPECT_GE(f.blastic_features[b], 0);
            EXPECT_GE(f.lytic_features[b], 0);
        }
    }
}

TEST(Forward, SoftModeFeaturesDiffer) {
    ModelConfig c = tiny_config(SharingMode::Soft);
    Network net = Network::build(c, 1);
    Graph g;
    ForwardOutput f = net.forward(g, g.input(random_batch(c, 1, 5)), RunMode::Train);
    for (int b = 0; b < 4; ++b) EXPECT_NE(f.blastic_features[b], f.lytic_features[b]);
}

TEST(Forward, EvalModeIsPureFunction) {
    ModelConfig c = tiny_config();
    Network net = Network::build(c, 2);
    Tensor batch = random_batch(c, 2, 6);
    auto run = [&]() {
        Graph g;
        ForwardOutput f = net.forward(g, g.input(batch), RunMode::Eval);
        return g.value(f.bq_logits).data;
    };
    EXPECT_EQ(run(), run());
}

TEST(Forward, ShapeMismatchRejected) {
    ModelConfig c = tiny_config();
    Network net = Network::build(c, 0);
    Graph g;
    int bad = g.input(Tensor::zeros({1, 1, 32, 32}));
    EXPECT_THROW(net.forward(g, bad, RunMode::Eval), std::invalid_argument);
}

// Perturbation probe: under HardAll a trunk weight feeds all four logit sets;
// the blastic head feeds only blastic and bq logits.
TEST(Forward, HardAllPerturbationRouting) {
    ModelConfig c = tiny_config();
    Network net = Network::build(c, 3);
    Tensor batch = random_batch(c, 1, 7);
    auto logits = [&]() {
        Graph g;
        ForwardOutput f = net.forward(g, g.input(batch), RunMode::Eval);
        return std::array<std::vector<double>, 4>{
            g.value(f.blastic_logits).data, g.value(f.lytic_logits).data,
            g.value(f.pi_logits).data, g.value(f.bq_logits).data};
    };
    const auto base = logits();

    Tensor& trunk_w = net.params.at("trunk.stem.conv");
    trunk_w.data[0] += 0.5;
    const auto trunk_perturbed = logits();
    trunk_w.data[0] -= 0.5;
    for (int i = 0; i < 4; ++i) EXPECT_NE(base[i], trunk_perturbed[i]) << "logit set " << i;

    Tensor& head_w = net.params.at("head_blastic.W");
    head_w.data[0] += 0.5;
    const auto head_perturbed = logits();
    head_w.data[0] -= 0.5;
    EXPECT_NE(base[0], head_perturbed[0]);
    EXPECT_EQ(base[1], head_perturbed[1]);  // lytic unaffected
    EXPECT_EQ(base[2], head_perturbed[2]);  // pi unaffected
    EXPECT_NE(base[3], head_perturbed[3]);  // bq sees it through the combiner
}

TEST(Combiner, ZeroWeightsBroadcastBias) {
    ModelConfig c = tiny_config();
    Network net = Network::build(c, 4);
    for (auto key : {"comb_l1.W", "comb_l2.W"})
        std::fill(net.params.at(key).data.begin(), net.params.at(key).data.end(), 0.0);
    Tensor& bias = net.params.at("comb_l2.b");
    bias.data = {0.1, -0.2, 0.3, -0.4};
    std::mt19937_64 rng(8);
    Graph g;
    int bl = g.input(gradcheck_detail::random_tensor({3, 2}, rng));
    int ly = g.input(gradcheck_detail::random_tensor({3, 2}, rng));
    const Tensor out = g.value(net.combine_logits(g, bl, ly));
    for (int n = 0; n < 3; ++n)
        for (int k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(out.data[out.idx2(n, k)], bias.data[k]);
}

TEST(Combiner, SoftmaxOfOutputNormalized) {
    ModelConfig c = tiny_config();
    Network net = Network::build(c, 4);
    std::mt19937_64 rng(9);
    Graph g;
    int bl = g.input(gradcheck_detail::random_tensor({2, 2}, rng));
    int ly = g.input(gradcheck_detail::random_tensor({2, 2}, rng));
    Tensor p = softmax_rows(g.value(net.combine_logits(g, bl, ly)));
    for (int n = 0; n < 2; ++n) {
        double s = 0.0;
        for (int k = 0; k < 4; ++k) s += p.data[p.idx2(n, k)];
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
}

// Gradient of the bq loss must reach both sub-task heads through the combiner.
TEST(Combiner, BqLossReachesSubTaskHeads) {
    ModelConfig c = tiny_config();
    Network net = Network::build(c, 5);
    Graph g;
    ForwardOutput f = net.forward(g, g.input(random_batch(c, 2, 10)), RunMode::Train);
    Tensor targets = Tensor::zeros({2, 4});
    targets.data[targets.idx2(0, 1)] = 1.0;
    targets.data[targets.idx2(1, 2)] = 1.0;
    int loss = g.weighted_mean(g.softmax_cross_entropy(f.bq_logits, targets), {1.0, 1.0});
    net.zero_grads();
    g.backward(loss);
    for (auto key : {"head_blastic.W", "head_lytic.W"}) {
        double norm = 0.0;
        for (double v : net.params.at(key).grad) norm += std::abs(v);
        EXPECT_GT(norm, 0.0) << key;
    }
}
