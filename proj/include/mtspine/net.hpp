#pragma once

#include <array>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mtspine/graph.hpp"
#include "mtspine/tensor.hpp"

namespace mtspine {

enum class SharingMode { HardAll, HardPartial, Soft };

inline std::string sharing_mode_name(SharingMode m) {
    switch (m) {
        case SharingMode::HardAll: return "hard_all";
        case SharingMode::HardPartial: return "hard_partial";
        case SharingMode::Soft: return "soft";
    }
    return "?";
}

inline SharingMode sharing_mode_from_name(const std::string& s) {
    if (s == "hard_all") return SharingMode::HardAll;
    if (s == "hard_partial") return SharingMode::HardPartial;
    if (s == "soft") return SharingMode::Soft;
    throw std::invalid_argument("unknown sharing mode: " + s);
}

struct ModelConfig {
    std::array<int, 4> block_layers{2, 2, 2, 2};
    int growth_rate = 8;
    int in_channels = 1;
    int input_h = 32;
    int input_w = 32;
    SharingMode sharing = SharingMode::HardAll;
    int mlp_hidden = 10;
    int num_pi_classes = 3;
    int num_bq_classes = 4;

    static ModelConfig desk_scale() { return ModelConfig{}; }

    static ModelConfig paper_scale() {
        ModelConfig c;
        c.block_layers = {6, 12, 24, 16};
        c.growth_rate = 32;
        c.input_h = 224;
        c.input_w = 224;
        return c;
    }
};

// Ids into a Graph for one forward pass.
struct ForwardOutput {
    int blastic_logits = -1;  // [N,2]
    int lytic_logits = -1;    // [N,2]
    int pi_logits = -1;       // [N,3]
    int bq_logits = -1;       // [N,4] — always from the combiner
    // Feature maps at the end of each dense block, per pathway. Under hard
    // sharing both entries alias the shared trunk's features.
    std::array<int, 4> blastic_features{-1, -1, -1, -1};
    std::array<int, 4> lytic_features{-1, -1, -1, -1};
};

// Dense-block backbone with three sharing regimes, task heads and the MLP
// logit combiner. Parameters live in a name-keyed map; map ordering fixes
// the iteration order for optimizers and checkpoints.
class Network {
  public:
    ModelConfig config;
    std::map<std::string, Tensor> params;
    std::map<std::string, BatchNormState> bn_states;

    static Network build(const ModelConfig& cfg, unsigned seed) {
        if (cfg.input_h % 16 != 0 || cfg.input_w % 16 != 0 || cfg.input_h < 16 || cfg.input_w < 16)
            throw std::invalid_argument("input spatial size must be a positive multiple of 16 "
                                        "(four 2x downsamplings)");
        for (int l : cfg.block_layers)
            if (l <= 0) throw std::invalid_argument("block_layers must be positive");
        Network net;
        net.config = cfg;
        std::mt19937_64 rng(seed);

        switch (cfg.sharing) {
            case SharingMode::HardAll:
                net.add_trunk("trunk", rng);
                break;
            case SharingMode::HardPartial:
                net.add_trunk_shared3("shared", rng);
                net.add_block4("blastic4", rng);
                net.add_block4("lytic4", rng);
                net.add_block4("pi4", rng);
                break;
            case SharingMode::Soft:
                net.add_trunk("bb_blastic", rng);
                net.add_trunk("bb_lytic", rng);
                break;
        }
        const int feat = net.final_channels();
        net.add_linear("head_blastic", 2, feat, rng);
        net.add_linear("head_lytic", 2, feat, rng);
        net.add_linear("head_pi", cfg.num_pi_classes, feat, rng);
        net.add_linear("comb_l1", cfg.mlp_hidden, 4, rng);
        net.add_linear("comb_l2", cfg.num_bq_classes, cfg.mlp_hidden, rng);
        return net;
    }

    // Channel bookkeeping: stem emits 2*growth; block i adds layers_i*growth;
    // each transition halves (floor).
    int final_channels() const {
        int c = 2 * config.growth_rate;
        for (int b = 0; b < 4; ++b) {
            c += config.block_layers[b] * config.growth_rate;
            if (b < 3) c /= 2;
        }
        return c;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : params) n += t.numel();
        return n;
    }

    ForwardOutput forward(Graph& g, int input_id, RunMode mode) {
        const Tensor& in = g.value(input_id);
        if (in.rank() != 4 || in.dim(1) != config.in_channels || in.dim(2) != config.input_h ||
            in.dim(3) != config.input_w)
            throw std::invalid_argument("forward: batch shape " + shape_str(in.shape) +
                                        " does not match configured input size");
        ForwardOutput out;
        int blastic_feat = -1, lytic_feat = -1, pi_feat = -1;
        switch (config.sharing) {
            case SharingMode::HardAll: {
                auto t = run_trunk(g, "trunk", input_id, mode);
                blastic_feat = lytic_feat = pi_feat = t.final_id;
                out.blastic_features = out.lytic_features = t.block_features;
                break;
            }
            case SharingMode::HardPartial: {
                auto s = run_shared3(g, "shared", input_id, mode);
                auto fb = run_block4(g, "blastic4", s.final_id, mode);
                auto fl = run_block4(g, "lytic4", s.final_id, mode);
                auto fp = run_block4(g, "pi4", s.final_id, mode);
                blastic_feat = fb.final_id;
                lytic_feat = fl.final_id;
                pi_feat = fp.final_id;
                out.blastic_features = s.block_features;
                out.blastic_features[3] = fb.block_feature;
                out.lytic_features = s.block_features;
                out.lytic_features[3] = fl.block_feature;
                break;
            }
            case SharingMode::Soft: {
                auto tb = run_trunk(g, "bb_blastic", input_id, mode);
                auto tl = run_trunk(g, "bb_lytic", input_id, mode);
                blastic_feat = tb.final_id;
                lytic_feat = tl.final_id;
                pi_feat = tb.final_id;  // PI rides the blastic backbone
                out.blastic_features = tb.block_features;
                out.lytic_features = tl.block_features;
                break;
            }
        }
        out.blastic_logits = head(g, "head_blastic", blastic_feat);
        out.lytic_logits = head(g, "head_lytic", lytic_feat);
        out.pi_logits = head(g, "head_pi", pi_feat);
        out.bq_logits = combine_logits(g, out.blastic_logits, out.lytic_logits);
        return out;
    }

    // Concatenate sub-task logits (blastic first) and map through
    // linear -> tanh -> linear to 4-class logits.
    int combine_logits(Graph& g, int blastic_id, int lytic_id) {
        int cat = g.concat_channels({blastic_id, lytic_id});
        int h = g.tanh_(g.linear(cat, g.param(params.at("comb_l1.W")), g.param(params.at("comb_l1.b"))));
        return g.linear(h, g.param(params.at("comb_l2.W")), g.param(params.at("comb_l2.b")));
    }

    void zero_grads() {
        for (auto& [name, t] : params) t.zero_grad();
    }

  private:
    struct TrunkOut {
        int final_id;
        std::array<int, 4> block_features;
    };
    struct Shared3Out {
        int final_id;  // after transition 3
        std::array<int, 4> block_features;  // [3] filled by block4
    };
    struct Block4Out {
        int final_id;  // after final BN/ReLU + global pool input point
        int block_feature;
    };

    // --- parameter construction -----------------------------------------

    void add_conv(const std::string& name, int out_c, int in_c, int k, std::mt19937_64& rng) {
        Tensor w({out_c, in_c, k, k});
        const double std_dev = std::sqrt(2.0 / (static_cast<double>(in_c) * k * k));
        std::normal_distribution<double> dist(0.0, std_dev);
        for (double& v : w.data) v = dist(rng);
        params.emplace(name, std::move(w));
    }

    void add_bn(const std::string& name, int c) {
        params.emplace(name + ".gamma", Tensor::full({c}, 1.0));
        params.emplace(name + ".beta", Tensor::zeros({c}));
        bn_states.emplace(name, BatchNormState::init(c));
    }

    void add_linear(const std::string& name, int out_d, int in_d, std::mt19937_64& rng) {
        Tensor w({out_d, in_d});
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(in_d)));
        for (double& v : w.data) v = dist(rng);
        params.emplace(name + ".W", std::move(w));
        params.emplace(name + ".b", Tensor::zeros({out_d}));
    }

    void add_dense_block(const std::string& prefix, int block, int& c, std::mt19937_64& rng) {
        for (int l = 0; l < config.block_layers[block]; ++l) {
            const std::string base = prefix + ".b" + std::to_string(block) + ".l" + std::to_string(l);
            add_bn(base + ".bn", c);
            add_conv(base + ".conv", config.growth_rate, c, 3, rng);
            c += config.growth_rate;
        }
    }

    void add_transition(const std::string& prefix, int t, int& c, std::mt19937_64& rng) {
        const std::string base = prefix + ".t" + std::to_string(t);
        add_bn(base + ".bn", c);
        add_conv(base + ".conv", c / 2, c, 1, rng);
        c /= 2;
    }

    void add_stem(const std::string& prefix, int& c, std::mt19937_64& rng) {
        c = 2 * config.growth_rate;
        add_conv(prefix + ".stem.conv", c, config.in_channels, 3, rng);
    }

    void add_trunk(const std::string& prefix, std::mt19937_64& rng) {
        int c = 0;
        add_stem(prefix, c, rng);
        for (int b = 0; b < 4; ++b) {
            add_dense_block(prefix, b, c, rng);
            if (b < 3) add_transition(prefix, b, c, rng);
        }
        add_bn(prefix + ".final.bn", c);
    }

    void add_trunk_shared3(const std::string& prefix, std::mt19937_64& rng) {
        int c = 0;
        add_stem(prefix, c, rng);
        for (int b = 0; b < 3; ++b) {
            add_dense_block(prefix, b, c, rng);
            add_transition(prefix, b, c, rng);
        }
        shared3_channels_ = c;
    }

    void add_block4(const std::string& prefix, std::mt19937_64& rng) {
        int c = shared3_channels_;
        // block index 3 within its own prefix
        for (int l = 0; l < config.block_layers[3]; ++l) {
            const std::string base = prefix + ".b3.l" + std::to_string(l);
            add_bn(base + ".bn", c);
            add_conv(base + ".conv", config.growth_rate, c, 3, rng);
            c += config.growth_rate;
        }
        add_bn(prefix + ".final.bn", c);
    }

    // --- forward helpers -------------------------------------------------

    int bn_relu(Graph& g, const std::string& bn_name, int x, RunMode mode) {
        int y = g.batchnorm2d(x, g.param(params.at(bn_name + ".gamma")),
                              g.param(params.at(bn_name + ".beta")), bn_states.at(bn_name), mode);
        return g.relu(y);
    }

    int dense_layer(Graph& g, const std::string& base, int x, RunMode mode) {
        int y = bn_relu(g, base + ".bn", x, mode);
        int c = g.conv2d(y, g.param(params.at(base + ".conv")), 1, 1);
        return g.concat_channels({x, c});
    }

    int run_block(Graph& g, const std::string& prefix, int block, int x, RunMode mode) {
        for (int l = 0; l < config.block_layers[block]; ++l)
            x = dense_layer(g, prefix + ".b" + std::to_string(block) + ".l" + std::to_string(l), x, mode);
        return x;
    }

    int run_transition(Graph& g, const std::string& prefix, int t, int x, RunMode mode) {
        const std::string base = prefix + ".t" + std::to_string(t);
        int y = bn_relu(g, base + ".bn", x, mode);
        y = g.conv2d(y, g.param(params.at(base + ".conv")), 1, 0);
        return g.avg_pool2x2(y);
    }

    int run_stem(Graph& g, const std::string& prefix, int x) {
        int y = g.conv2d(x, g.param(params.at(prefix + ".stem.conv")), 1, 1);
        return g.avg_pool2x2(y);
    }

    TrunkOut run_trunk(Graph& g, const std::string& prefix, int input_id, RunMode mode) {
        TrunkOut out{};
        int x = run_stem(g, prefix, input_id);
        for (int b = 0; b < 4; ++b) {
            x = run_block(g, prefix, b, x, mode);
            out.block_features[b] = x;  // features at the end of each block
            if (b < 3) x = run_transition(g, prefix, b, x, mode);
        }
        out.final_id = g.global_avg_pool(bn_relu(g, prefix + ".final.bn", x, mode));
        return out;
    }

    Shared3Out run_shared3(Graph& g, const std::string& prefix, int input_id, RunMode mode) {
        Shared3Out out{};
        int x = run_stem(g, prefix, input_id);
        for (int b = 0; b < 3; ++b) {
            x = run_block(g, prefix, b, x, mode);
            out.block_features[b] = x;
            x = run_transition(g, prefix, b, x, mode);
        }
        out.final_id = x;
        return out;
    }

    Block4Out run_block4(Graph& g, const std::string& prefix, int x, RunMode mode) {
        Block4Out out{};
        for (int l = 0; l < config.block_layers[3]; ++l)
            x = dense_layer(g, prefix + ".b3.l" + std::to_string(l), x, mode);
        out.block_feature = x;
        out.final_id = g.global_avg_pool(bn_relu(g, prefix + ".final.bn", x, mode));
        return out;
    }

    int head(Graph& g, const std::string& name, int feat_id) {
        return g.linear(feat_id, g.param(params.at(name + ".W")), g.param(params.at(name + ".b")));
    }

    int shared3_channels_ = 0;
};

}  // namespace mtspine
