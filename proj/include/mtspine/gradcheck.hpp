#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mtspine/graph.hpp"
#include "mtspine/net.hpp"
#include "mtspine/objectives.hpp"

namespace mtspine {

struct GradCheckResult {
    std::string op;
    double max_rel_err = 0.0;
    bool pass = false;
};

namespace gradcheck_detail {

constexpr double kStep = 1e-5;
constexpr double kTol = 1e-4;

inline double rel_err(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
    return std::abs(analytic - numeric) / denom;
}

// Central-difference check of d(root)/d(param entries) against the tape.
// `build` must construct the scalar root from the current parameter values.
// When entries_per_param > 0 only a random subset of entries is probed.
inline GradCheckResult check(const std::string& name, std::vector<Tensor*> params,
                             const std::function<int(Graph&)>& build, std::mt19937_64& rng,
                             int entries_per_param = 0) {
    GradCheckResult res;
    res.op = name;
    for (Tensor* p : params) {
        p->grad.clear();
        p->ensure_grad();
    }
    {
        Graph g;
        int root = build(g);
        g.backward(root);
    }
    std::vector<std::vector<double>> analytic;
    for (Tensor* p : params) analytic.push_back(p->grad);

    auto value_at = [&]() {
        Graph g;
        return g.value(build(g)).data[0];
    };

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor* p = params[pi];
        std::vector<std::size_t> entries;
        if (entries_per_param <= 0 || static_cast<std::size_t>(entries_per_param) >= p->numel()) {
            entries.resize(p->numel());
            for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = i;
        } else {
            std::uniform_int_distribution<std::size_t> pick(0, p->numel() - 1);
            for (int i = 0; i < entries_per_param; ++i) entries.push_back(pick(rng));
        }
        for (std::size_t i : entries) {
            const double saved = p->data[i];
            auto central = [&](double h) {
                p->data[i] = saved + h;
                const double up = value_at();
                p->data[i] = saved - h;
                const double down = value_at();
                p->data[i] = saved;
                return (up - down) / (2.0 * h);
            };
            const double full = central(kStep);
            const double half = central(0.5 * kStep);
            // a ReLU kink inside the probe window makes the estimate invalid;
            // detect it by comparing the full- and half-step estimates
            if (rel_err(full, half) > kTol) continue;
            // Richardson extrapolation cancels the O(h^2) truncation term
            const double numeric = (4.0 * half - full) / 3.0;
            res.max_rel_err = std::max(res.max_rel_err, rel_err(analytic[pi][i], numeric));
        }
    }
    res.pass = res.max_rel_err < kTol;
    return res;
}

inline Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.data) v = dist(rng);
    return t;
}

// Uniform magnitudes in [0.2, 1.2] with random sign, keeping values away
// from the ReLU kink so finite differences stay valid.
inline Tensor random_tensor_off_kink(std::vector<int> shape, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> mag(0.2, 1.2);
    std::uniform_int_distribution<int> sign(0, 1);
    for (double& v : t.data) v = (sign(rng) ? 1.0 : -1.0) * mag(rng);
    return t;
}

inline Tensor random_target_rows(int n, int k, std::mt19937_64& rng) {
    Tensor t({n, k});
    std::uniform_real_distribution<double> dist(0.05, 1.0);
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < k; ++j) s += (t.data[t.idx2(i, j)] = dist(rng));
        for (int j = 0; j < k; ++j) t.data[t.idx2(i, j)] /= s;
    }
    return t;
}

}  // namespace gradcheck_detail

// Finite-difference suite over every registered operator plus a fully
// composed network. Deterministic per seed.
inline std::vector<GradCheckResult> run_gradcheck_suite(unsigned seed,
                                                        const ModelConfig& net_cfg = ModelConfig{}) {
    namespace gd = gradcheck_detail;
    std::mt19937_64 rng(seed);
    std::vector<GradCheckResult> out;

    {
        Tensor in = gd::random_tensor({2, 3, 8, 8}, rng);
        Tensor ker = gd::random_tensor({4, 3, 3, 3}, rng);
        out.push_back(gd::check("conv2d_s1_p1", {&in, &ker}, [&](Graph& g) {
            return g.sum(g.conv2d(g.param(in), g.param(ker), 1, 1));
        }, rng));
        out.push_back(gd::check("conv2d_s2_p0", {&in, &ker}, [&](Graph& g) {
            return g.sum(g.conv2d(g.param(in), g.param(ker), 2, 0));
        }, rng));
        Tensor ker1 = gd::random_tensor({2, 3, 1, 1}, rng);
        out.push_back(gd::check("conv2d_1x1", {&in, &ker1}, [&](Graph& g) {
            return g.sum(g.conv2d(g.param(in), g.param(ker1), 1, 0));
        }, rng));
    }
    {
        Tensor in = gd::random_tensor({3, 2, 4, 4}, rng);
        Tensor gamma = gd::random_tensor({2}, rng, 0.5, 1.5);
        Tensor beta = gd::random_tensor({2}, rng);
        // weights downstream make the scalar sensitive to every element
        Tensor mix = gd::random_tensor({3, 2, 4, 4}, rng);
        BatchNormState st = BatchNormState::init(2);
        out.push_back(gd::check("batchnorm2d_train", {&in, &gamma, &beta}, [&](Graph& g) {
            BatchNormState local = st;
            int y = g.batchnorm2d(g.param(in), g.param(gamma), g.param(beta), local, RunMode::Train);
            return g.sum(g.mul(y, g.input(mix)));
        }, rng));
        BatchNormState st_eval = BatchNormState::init(2);
        st_eval.running_mean = {0.1, -0.2};
        st_eval.running_var = {1.5, 0.7};
        out.push_back(gd::check("batchnorm2d_eval", {&in, &gamma, &beta}, [&](Graph& g) {
            BatchNormState local = st_eval;
            int y = g.batchnorm2d(g.param(in), g.param(gamma), g.param(beta), local, RunMode::Eval);
            return g.sum(g.mul(y, g.input(mix)));
        }, rng));
    }
    {
        Tensor in = gd::random_tensor_off_kink({4, 6}, rng);
        Tensor mix = gd::random_tensor({4, 6}, rng);
        out.push_back(gd::check("relu", {&in}, [&](Graph& g) {
            return g.sum(g.mul(g.relu(g.param(in)), g.input(mix)));
        }, rng));
        out.push_back(gd::check("tanh", {&in}, [&](Graph& g) {
            return g.sum(g.mul(g.tanh_(g.param(in)), g.input(mix)));
        }, rng));
    }
    {
        Tensor in = gd::random_tensor({3, 5}, rng);
        Tensor w = gd::random_tensor({4, 5}, rng);
        Tensor b = gd::random_tensor({4}, rng);
        Tensor mix = gd::random_tensor({3, 4}, rng);
        out.push_back(gd::check("linear", {&in, &w, &b}, [&](Graph& g) {
            return g.sum(g.mul(g.linear(g.param(in), g.param(w), g.param(b)), g.input(mix)));
        }, rng));
    }
    {
        Tensor a = gd::random_tensor({2, 3, 4, 4}, rng);
        Tensor b = gd::random_tensor({2, 2, 4, 4}, rng);
        Tensor mix = gd::random_tensor({2, 5, 4, 4}, rng);
        out.push_back(gd::check("concat_channels", {&a, &b}, [&](Graph& g) {
            return g.sum(g.mul(g.concat_channels({g.param(a), g.param(b)}), g.input(mix)));
        }, rng));
        Tensor mix2 = gd::random_tensor({2, 2, 4, 4}, rng);
        out.push_back(gd::check("slice_channels", {&a}, [&](Graph& g) {
            return g.sum(g.mul(g.slice_channels(g.param(a), 1, 3), g.input(mix2)));
        }, rng));
    }
    {
        Tensor in = gd::random_tensor({2, 3, 6, 6}, rng);
        Tensor mix = gd::random_tensor({2, 3, 3, 3}, rng);
        out.push_back(gd::check("avg_pool2x2", {&in}, [&](Graph& g) {
            return g.sum(g.mul(g.avg_pool2x2(g.param(in)), g.input(mix)));
        }, rng));
        Tensor mix2 = gd::random_tensor({2, 3}, rng);
        out.push_back(gd::check("global_avg_pool", {&in}, [&](Graph& g) {
            return g.sum(g.mul(g.global_avg_pool(g.param(in)), g.input(mix2)));
        }, rng));
    }
    {
        Tensor logits = gd::random_tensor({5, 4}, rng, -2.0, 2.0);
        Tensor targets = gd::random_target_rows(5, 4, rng);
        std::vector<double> w = {1.0, 0.0, 1.0, 1.0, 0.5};
        out.push_back(gd::check("softmax_cross_entropy", {&logits}, [&](Graph& g) {
            return g.weighted_mean(g.softmax_cross_entropy(g.param(logits), targets), w);
        }, rng));
    }
    {
        Tensor a = gd::random_tensor({3, 4}, rng);
        Tensor b = gd::random_tensor({3, 4}, rng);
        out.push_back(gd::check("sq_diff_sum", {&a, &b}, [&](Graph& g) {
            return g.sq_diff_sum(g.param(a), g.param(b));
        }, rng));
    }
    {
        // conv -> bn -> relu -> linear composite chain
        Tensor in = gd::random_tensor({2, 2, 6, 6}, rng);
        Tensor ker = gd::random_tensor({3, 2, 3, 3}, rng);
        Tensor gamma = gd::random_tensor({3}, rng, 0.5, 1.5);
        Tensor beta = gd::random_tensor({3}, rng);
        Tensor w = gd::random_tensor({2, 3}, rng);
        Tensor b = gd::random_tensor({2}, rng);
        Tensor targets = gd::random_target_rows(2, 2, rng);
        out.push_back(gd::check("composite_chain", {&in, &ker, &gamma, &beta, &w, &b}, [&](Graph& g) {
            BatchNormState st = BatchNormState::init(3);
            int x = g.conv2d(g.param(in), g.param(ker), 1, 1);
            x = g.batchnorm2d(x, g.param(gamma), g.param(beta), st, RunMode::Train);
            x = g.relu(x);
            x = g.global_avg_pool(x);
            x = g.linear(x, g.param(w), g.param(b));
            return g.weighted_mean(g.softmax_cross_entropy(x, targets), {1.0, 1.0});
        }, rng));
    }
    {
        // full composed network: probe a random subset of entries per tensor
        Network net = Network::build(net_cfg, seed);
        const auto bn_backup = net.bn_states;
        Tensor batch = gd::random_tensor({2, net_cfg.in_channels, net_cfg.input_h, net_cfg.input_w},
                                         rng, 0.0, 1.0);
        Tensor bq_targets = gd::random_target_rows(2, 4, rng);
        Tensor bin_targets = gd::random_target_rows(2, 2, rng);
        Tensor pi_targets = gd::random_target_rows(2, 3, rng);
        std::vector<Tensor*> ps;
        for (auto& [name, t] : net.params) ps.push_back(&t);
        out.push_back(gd::check("full_network", ps, [&](Graph& g) {
            net.bn_states = bn_backup;  // keep running stats fixed across probes
            ForwardOutput f = net.forward(g, g.input(batch), RunMode::Train);
            int lb = g.softmax_cross_entropy(f.blastic_logits, bin_targets);
            int ll = g.softmax_cross_entropy(f.lytic_logits, bin_targets);
            int lq = g.softmax_cross_entropy(f.bq_logits, bq_targets);
            int lp = g.softmax_cross_entropy(f.pi_logits, pi_targets);
            return overall_loss(g, lb, ll, lq, lp, LossWeights{}, {1.0, 1.0});
        }, rng, 4));
    }
    return out;
}

}  // namespace mtspine
