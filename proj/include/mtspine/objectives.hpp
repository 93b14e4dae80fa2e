#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "mtspine/graph.hpp"
#include "mtspine/tensor.hpp"

namespace mtspine {

// Task-term weights of the overall loss (blastic, lytic, bone quality);
// the PI term always enters with weight 1.
struct LossWeights {
    double lambda1 = 2.0;
    double lambda2 = 2.0;
    double lambda3 = 2.0;
};

// Per-dense-block weights of the soft-sharing feature penalty.
struct SoftShareWeights {
    std::array<double, 4> lambda{1.0, 1.0, 1.0, 1.0};
};

// Self-paced learning schedule state. pace_lambda is seeded from a loss
// percentile on the first advance and grown geometrically afterwards.
struct SplState {
    double pace_lambda = 0.0;
    bool initialized = false;
    double mu = 1.3;              // growth factor, > 1
    double start_percentile = 60.0;
    std::vector<int> v;           // binary sample weights for the current epoch
};

inline std::vector<double> smooth_labels(int class_index, int num_classes, double epsilon) {
    if (num_classes < 2) throw std::invalid_argument("smooth_labels: need at least 2 classes");
    if (class_index < 0 || class_index >= num_classes)
        throw std::invalid_argument("smooth_labels: class index out of range");
    if (epsilon < 0.0 || epsilon >= 1.0) throw std::invalid_argument("smooth_labels: epsilon in [0,1)");
    std::vector<double> d(num_classes, epsilon / num_classes);
    d[class_index] += 1.0 - epsilon;
    return d;
}

// Smoothed target distributions for a batch, rows [N,K].
inline Tensor smooth_label_batch(const std::vector<int>& classes, int num_classes, double epsilon) {
    Tensor t({static_cast<int>(classes.size()), num_classes});
    for (std::size_t i = 0; i < classes.size(); ++i) {
        auto row = smooth_labels(classes[i], num_classes, epsilon);
        std::copy(row.begin(), row.end(), t.data.begin() + static_cast<std::ptrdiff_t>(i * num_classes));
    }
    return t;
}

// L = l1*mean(v.Lb) + l2*mean(v.Ll) + l3*mean(v.Lbq) + mean(v.Lpi),
// built on the tape so gradients flow into every task term.
inline int overall_loss(Graph& g, int blastic_id, int lytic_id, int bq_id, int pi_id,
                        const LossWeights& w, const std::vector<double>& v) {
    const std::size_t n = g.value(blastic_id).numel();
    if (g.value(lytic_id).numel() != n || g.value(bq_id).numel() != n || g.value(pi_id).numel() != n)
        throw std::invalid_argument("overall_loss: per-task loss length mismatch");
    if (v.size() != n) throw std::invalid_argument("overall_loss: sample weight length mismatch");
    int acc = g.scale(g.weighted_mean(blastic_id, v), w.lambda1);
    acc = g.add(acc, g.scale(g.weighted_mean(lytic_id, v), w.lambda2));
    acc = g.add(acc, g.scale(g.weighted_mean(bq_id, v), w.lambda3));
    return g.add(acc, g.weighted_mean(pi_id, v));
}

// Sum_i lambda_i * ||fA_i - fB_i||_F^2 over the four dense blocks.
inline int soft_share_penalty(Graph& g, const std::array<int, 4>& features_a,
                              const std::array<int, 4>& features_b, const SoftShareWeights& w) {
    int acc = -1;
    for (int i = 0; i < 4; ++i) {
        if (!g.value(features_a[i]).same_shape(g.value(features_b[i])))
            throw std::invalid_argument("soft_share_penalty: feature shape mismatch at block " +
                                        std::to_string(i));
        int term = g.scale(g.sq_diff_sum(features_a[i], features_b[i]), w.lambda[i]);
        acc = (i == 0) ? term : g.add(acc, term);
    }
    return acc;
}

// Closed-form SPL weight update: include a sample iff its loss is strictly
// below the pace threshold.
inline std::vector<int> spl_weights(const std::vector<double>& per_sample_losses, double pace_lambda) {
    if (pace_lambda <= 0.0) throw std::invalid_argument("spl_weights: pace_lambda must be positive");
    std::vector<int> v(per_sample_losses.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (std::isnan(per_sample_losses[i])) throw std::invalid_argument("spl_weights: NaN loss");
        v[i] = per_sample_losses[i] < pace_lambda ? 1 : 0;
    }
    return v;
}

// Linear-interpolation percentile (p in [0,100]) over a copy of the data.
inline double percentile(std::vector<double> xs, double p) {
    if (xs.empty()) throw std::invalid_argument("percentile: empty input");
    std::sort(xs.begin(), xs.end());
    const double rank = p / 100.0 * static_cast<double>(xs.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, xs.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return xs[lo] + frac * (xs[hi] - xs[lo]);
}

// Once-per-epoch pace update followed by the closed-form v update.
inline void spl_advance(SplState& state, const std::vector<double>& epoch_losses) {
    if (epoch_losses.empty()) throw std::invalid_argument("spl_advance: empty loss vector");
    if (!state.initialized) {
        if (state.start_percentile <= 0.0 || state.start_percentile >= 100.0)
            throw std::invalid_argument("spl_advance: start_percentile must be in (0,100)");
        if (state.mu <= 1.0) throw std::invalid_argument("spl_advance: mu must be > 1");
        state.pace_lambda = percentile(epoch_losses, state.start_percentile);
        state.initialized = true;
    } else {
        state.pace_lambda *= state.mu;
    }
    state.v = spl_weights(epoch_losses, state.pace_lambda);
}

}  // namespace mtspine
