#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtspine/datagen.hpp"
#include "mtspine/net.hpp"
#include "mtspine/objectives.hpp"

namespace mtspine {

struct TrainConfig {
    double base_lr = 0.001;
    double momentum = 0.9;
    int epochs = 50;
    int batch_size = 32;
    int warmup_epochs = 5;
    bool spl_enabled = false;
    double spl_mu = 1.3;
    double spl_start_percentile = 60.0;
    bool spl_include_pi = true;  // whether L_PI contributes to the difficulty score
    LossWeights loss_weights{};
    SoftShareWeights soft_share{};
    double label_smoothing_epsilon = 0.1;
    double hu_threshold = 150.0;
    unsigned seed = 0;
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double mean_selected_loss = 0.0;
    double selected_fraction = 1.0;
    double blastic_loss = 0.0;
    double lytic_loss = 0.0;
    double bq_loss = 0.0;
    double pi_loss = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> records;

    std::string to_csv() const {
        std::string out = "epoch,lr,mean_selected_loss,selected_fraction,"
                          "blastic_loss,lytic_loss,bq_loss,pi_loss\n";
        char buf[256];
        for (const auto& r : records) {
            std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                          r.epoch, r.lr, r.mean_selected_loss, r.selected_fraction,
                          r.blastic_loss, r.lytic_loss, r.bq_loss, r.pi_loss);
            out += buf;
        }
        return out;
    }
};

// Linear warmup to base_lr, then cosine decay to zero over the remainder.
inline double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0 || epoch >= cfg.epochs) throw std::invalid_argument("lr_at: epoch out of range");
    if (cfg.warmup_epochs >= cfg.epochs) throw std::invalid_argument("lr_at: warmup_epochs >= epochs");
    if (epoch < cfg.warmup_epochs)
        return cfg.base_lr * static_cast<double>(epoch + 1) / cfg.warmup_epochs;
    const double t = static_cast<double>(epoch - cfg.warmup_epochs) /
                     static_cast<double>(cfg.epochs - cfg.warmup_epochs);
    return 0.5 * cfg.base_lr * (1.0 + std::cos(M_PI * t));
}

using VelocityState = std::map<std::string, std::vector<double>>;

// v := momentum*v + grad; w := w - lr*v. Throws on non-finite gradients
// before touching any parameter.
inline void sgd_step(Network& net, VelocityState& velocity, double lr, double momentum) {
    for (const auto& [name, p] : net.params) {
        if (p.grad.empty()) continue;
        for (double g : p.grad)
            if (!std::isfinite(g)) throw std::runtime_error("sgd_step: non-finite gradient in " + name);
    }
    for (auto& [name, p] : net.params) {
        if (p.grad.empty()) continue;
        auto& v = velocity[name];
        if (v.size() != p.grad.size()) v.assign(p.grad.size(), 0.0);
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            v[i] = momentum * v[i] + p.grad[i];
            p.data[i] -= lr * v[i];
        }
    }
}

// Preprocessed training set: cropped, normalized images plus all labels.
struct PreparedData {
    std::vector<Tensor> images;  // each [1,h,w]-shaped payload stored as [h,w]
    std::vector<int> blastic, lytic, bq, pi;
    int h = 0, w = 0;
};

inline PreparedData prepare(const std::vector<SliceSample>& samples, double hu_threshold,
                            int out_h, int out_w) {
    PreparedData d;
    d.h = out_h;
    d.w = out_w;
    for (const auto& s : samples) {
        d.images.push_back(threshold_crop(s.image, hu_threshold, out_h, out_w));
        const auto dec = decompose_label(s.bq_label);
        d.blastic.push_back(dec.blastic);
        d.lytic.push_back(dec.lytic);
        d.bq.push_back(s.bq_label);
        if (s.pi_label < 0 || s.pi_label > 2) throw std::invalid_argument("prepare: bad PI label");
        d.pi.push_back(s.pi_label);
    }
    return d;
}

inline Tensor make_batch(const PreparedData& d, const std::vector<std::size_t>& idx) {
    Tensor batch({static_cast<int>(idx.size()), 1, d.h, d.w});
    std::size_t off = 0;
    for (std::size_t i : idx) {
        std::copy(d.images[i].data.begin(), d.images[i].data.end(), batch.data.begin() + off);
        off += d.images[i].data.size();
    }
    return batch;
}

namespace train_detail {

struct BatchLosses {
    ForwardOutput fwd;
    int blastic_loss, lytic_loss, bq_loss, pi_loss;  // per-sample loss node ids
};

inline BatchLosses batch_losses(Graph& g, Network& net, const PreparedData& d,
                                const std::vector<std::size_t>& idx, RunMode mode, double eps) {
    std::vector<int> lb, ll, lq, lp;
    for (std::size_t i : idx) {
        lb.push_back(d.blastic[i]);
        ll.push_back(d.lytic[i]);
        lq.push_back(d.bq[i]);
        lp.push_back(d.pi[i]);
    }
    BatchLosses out{};
    int input = g.input(make_batch(d, idx));
    out.fwd = net.forward(g, input, mode);
    out.blastic_loss = g.softmax_cross_entropy(out.fwd.blastic_logits, smooth_label_batch(lb, 2, eps));
    out.lytic_loss = g.softmax_cross_entropy(out.fwd.lytic_logits, smooth_label_batch(ll, 2, eps));
    out.bq_loss = g.softmax_cross_entropy(out.fwd.bq_logits,
                                          smooth_label_batch(lq, net.config.num_bq_classes, eps));
    out.pi_loss = g.softmax_cross_entropy(out.fwd.pi_logits,
                                          smooth_label_batch(lp, net.config.num_pi_classes, eps));
    return out;
}

// Per-sample composite difficulty scores over the whole set, eval mode.
inline std::vector<double> composite_losses(Network& net, const PreparedData& d,
                                            const TrainConfig& cfg, int batch_size) {
    std::vector<double> out;
    const std::size_t n = d.images.size();
    for (std::size_t start = 0; start < n; start += batch_size) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(n, start + batch_size); ++i) idx.push_back(i);
        Graph g;
        auto bl = batch_losses(g, net, d, idx, RunMode::Eval, cfg.label_smoothing_epsilon);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            double l = cfg.loss_weights.lambda1 * g.value(bl.blastic_loss).data[i] +
                       cfg.loss_weights.lambda2 * g.value(bl.lytic_loss).data[i] +
                       cfg.loss_weights.lambda3 * g.value(bl.bq_loss).data[i];
            if (cfg.spl_include_pi) l += g.value(bl.pi_loss).data[i];
            out.push_back(l);
        }
    }
    return out;
}

}  // namespace train_detail

struct TrainResult {
    Network net;
    TrainLog log;
    SplState spl;
    VelocityState velocity;
    int epochs_done = 0;
};

// Resumable training entry point: pass a TrainResult from a previous run (or
// a checkpoint) to continue from result.epochs_done.
inline void train_continue(TrainResult& r, const PreparedData& data, const TrainConfig& cfg) {
    const std::size_t n = data.images.size();
    if (n == 0) throw std::invalid_argument("train: empty dataset");
    r.spl.mu = cfg.spl_mu;
    r.spl.start_percentile = cfg.spl_start_percentile;

    for (int epoch = r.epochs_done; epoch < cfg.epochs; ++epoch) {
        std::vector<int> v(n, 1);
        if (cfg.spl_enabled) {
            auto losses = train_detail::composite_losses(r.net, data, cfg, cfg.batch_size);
            spl_advance(r.spl, losses);
            v = r.spl.v;
        }
        std::vector<std::size_t> selected;
        for (std::size_t i = 0; i < n; ++i)
            if (v[i]) selected.push_back(i);
        if (selected.empty()) {
            if (epoch == 0)
                throw std::runtime_error("train: SPL deselected every sample in epoch 1; "
                                         "increase spl_start_percentile");
            // pace not yet caught up with the loss scale; skip the epoch
            r.log.records.push_back({epoch, lr_at(epoch, cfg), 0.0, 0.0, 0.0, 0.0, 0.0, 0.0});
            r.epochs_done = epoch + 1;
            continue;
        }

        std::mt19937_64 shuffle_rng(static_cast<std::uint64_t>(cfg.seed) * 0x9e3779b97f4a7c15ull +
                                    static_cast<std::uint64_t>(epoch) + 1);
        std::shuffle(selected.begin(), selected.end(), shuffle_rng);

        const double lr = lr_at(epoch, cfg);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.selected_fraction = static_cast<double>(selected.size()) / static_cast<double>(n);
        double loss_sum = 0.0, lb_sum = 0.0, ll_sum = 0.0, lq_sum = 0.0, lp_sum = 0.0;
        std::size_t count = 0;

        for (std::size_t start = 0; start < selected.size(); start += cfg.batch_size) {
            std::vector<std::size_t> idx(selected.begin() + start,
                                         selected.begin() +
                                             std::min(selected.size(),
                                                      start + static_cast<std::size_t>(cfg.batch_size)));
            Graph g;
            auto bl = train_detail::batch_losses(g, r.net, data, idx, RunMode::Train,
                                                 cfg.label_smoothing_epsilon);
            std::vector<double> ones(idx.size(), 1.0);
            int loss = overall_loss(g, bl.blastic_loss, bl.lytic_loss, bl.bq_loss, bl.pi_loss,
                                    cfg.loss_weights, ones);
            if (r.net.config.sharing == SharingMode::Soft)
                loss = g.add(loss, soft_share_penalty(g, bl.fwd.blastic_features,
                                                      bl.fwd.lytic_features, cfg.soft_share));
            r.net.zero_grads();
            g.backward(loss);
            sgd_step(r.net, r.velocity, lr, cfg.momentum);

            const std::size_t m = idx.size();
            loss_sum += g.value(loss).data[0] * static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i) {
                lb_sum += g.value(bl.blastic_loss).data[i];
                ll_sum += g.value(bl.lytic_loss).data[i];
                lq_sum += g.value(bl.bq_loss).data[i];
                lp_sum += g.value(bl.pi_loss).data[i];
            }
            count += m;
        }
        rec.mean_selected_loss = loss_sum / static_cast<double>(count);
        rec.blastic_loss = lb_sum / static_cast<double>(count);
        rec.lytic_loss = ll_sum / static_cast<double>(count);
        rec.bq_loss = lq_sum / static_cast<double>(count);
        rec.pi_loss = lp_sum / static_cast<double>(count);
        r.log.records.push_back(rec);
        r.epochs_done = epoch + 1;
    }
}

inline TrainResult train(const std::vector<SliceSample>& samples, const ModelConfig& mcfg,
                         const TrainConfig& cfg) {
    TrainResult r;
    r.net = Network::build(mcfg, cfg.seed);
    if (cfg.epochs == 0) return r;
    PreparedData data = prepare(samples, cfg.hu_threshold, mcfg.input_h, mcfg.input_w);
    train_continue(r, data, cfg);
    return r;
}

}  // namespace mtspine
