#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtspine/datagen.hpp"
#include "mtspine/net.hpp"
#include "mtspine/training.hpp"

namespace mtspine {

// Rows = ground truth, columns = prediction.
struct ConfusionMatrix {
    int num_classes = 0;
    std::vector<long> counts;  // K*K row-major

    explicit ConfusionMatrix(int k = 0) : num_classes(k), counts(static_cast<std::size_t>(k) * k, 0) {}

    long& at(int truth, int pred) { return counts[static_cast<std::size_t>(truth) * num_classes + pred]; }
    long at(int truth, int pred) const {
        return counts[static_cast<std::size_t>(truth) * num_classes + pred];
    }

    long total() const {
        long t = 0;
        for (long c : counts) t += c;
        return t;
    }

    double accuracy() const {
        long diag = 0;
        for (int c = 0; c < num_classes; ++c) diag += at(c, c);
        const long t = total();
        return t == 0 ? 0.0 : static_cast<double>(diag) / static_cast<double>(t);
    }

    std::string to_text() const {
        std::string out;
        for (int i = 0; i < num_classes; ++i) {
            for (int j = 0; j < num_classes; ++j) {
                if (j) out += ' ';
                out += std::to_string(at(i, j));
            }
            out += '\n';
        }
        return out;
    }
};

inline ConfusionMatrix confusion(const std::vector<int>& truth, const std::vector<int>& pred, int k) {
    if (truth.size() != pred.size()) throw std::invalid_argument("confusion: length mismatch");
    ConfusionMatrix m(k);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= k || pred[i] < 0 || pred[i] >= k)
            throw std::invalid_argument("confusion: label out of range");
        ++m.at(truth[i], pred[i]);
    }
    return m;
}

struct ClassMetrics {
    std::optional<double> sensitivity;  // empty when the class has no truth instances
    double specificity = 0.0;
};

// One-vs-rest SE/SP per class.
inline std::vector<ClassMetrics> sensitivity_specificity(const ConfusionMatrix& m) {
    if (m.total() == 0) throw std::invalid_argument("sensitivity_specificity: empty matrix");
    std::vector<ClassMetrics> out(m.num_classes);
    for (int c = 0; c < m.num_classes; ++c) {
        long truth_c = 0;
        for (int j = 0; j < m.num_classes; ++j) truth_c += m.at(c, j);
        if (truth_c > 0) out[c].sensitivity = static_cast<double>(m.at(c, c)) / truth_c;
        long tn = 0, neg = 0;
        for (int i = 0; i < m.num_classes; ++i) {
            if (i == c) continue;
            for (int j = 0; j < m.num_classes; ++j) {
                neg += m.at(i, j);
                if (j != c) tn += m.at(i, j);
            }
        }
        out[c].specificity = neg == 0 ? 0.0 : static_cast<double>(tn) / neg;
    }
    return out;
}

struct EvalReport {
    ConfusionMatrix matrix{0};
    std::vector<ClassMetrics> per_class;
    std::string level;  // "slice" or "vertebra"

    // Tab-2 style row: SE_N,SP_N,SE_B,SP_B,SE_M,SP_M,SE_L,SP_L (4-class) or
    // the 3-class analogue for PI.
    std::string metrics_csv() const {
        static const char* bq_names[] = {"N", "B", "M", "L"};
        static const char* pi_names[] = {"N", "U", "B"};
        const char** names = matrix.num_classes == 4 ? bq_names : pi_names;
        std::string header, row;
        char buf[64];
        for (int c = 0; c < matrix.num_classes; ++c) {
            if (c) { header += ','; row += ','; }
            header += std::string("SE_") + names[c] + ",SP_" + names[c];
            if (per_class[c].sensitivity)
                std::snprintf(buf, sizeof(buf), "%.4f", *per_class[c].sensitivity);
            else
                std::snprintf(buf, sizeof(buf), "undefined");
            row += buf;
            std::snprintf(buf, sizeof(buf), ",%.4f", per_class[c].specificity);
            row += buf;
        }
        return header + "\n" + row + "\n";
    }
};

inline EvalReport make_report(const std::vector<int>& truth, const std::vector<int>& pred, int k,
                              const std::string& level) {
    EvalReport r;
    r.matrix = confusion(truth, pred, k);
    r.per_class = sensitivity_specificity(r.matrix);
    r.level = level;
    return r;
}

struct SlicePrediction {
    int bq_class = 0;
    std::vector<double> probs;  // 4-class probabilities
};

// Count predicted slices per lesion class; the winning lesion class must beat
// the threshold strictly, otherwise the vertebra is called normal. Lesion
// ties break on summed predicted probability, then on fixed class order.
inline int vote_vertebra(const std::vector<SlicePrediction>& slices, int threshold) {
    if (slices.empty()) throw std::invalid_argument("vote_vertebra: empty slice list");
    if (threshold < 0) throw std::invalid_argument("vote_vertebra: negative threshold");
    long count[4] = {0, 0, 0, 0};
    double prob_sum[4] = {0.0, 0.0, 0.0, 0.0};
    for (const auto& s : slices) {
        if (s.bq_class < 0 || s.bq_class > 3) throw std::invalid_argument("vote_vertebra: bad class");
        ++count[s.bq_class];
        if (!s.probs.empty()) prob_sum[s.bq_class] += s.probs[s.bq_class];
    }
    int best = -1;
    for (int c = BqBlastic; c <= BqLytic; ++c) {
        if (best == -1 || count[c] > count[best] ||
            (count[c] == count[best] && prob_sum[c] > prob_sum[best]))
            best = c;
    }
    return count[best] > threshold ? best : BqNormal;
}

struct EvalResult {
    EvalReport slice_bq;
    EvalReport vertebra_bq;
    EvalReport slice_pi;
};

// Batched eval-mode inference over a dataset; slice-level reports plus
// vertebra-level voting against the group's majority ground-truth label.
inline EvalResult evaluate(Network& net, const std::vector<SliceSample>& samples,
                           double hu_threshold, int vote_threshold, int batch_size = 32) {
    if (samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
    PreparedData data = prepare(samples, hu_threshold, net.config.input_h, net.config.input_w);
    const std::size_t n = samples.size();
    std::vector<int> bq_pred(n), pi_pred(n);
    std::vector<std::vector<double>> bq_probs(n);

    for (std::size_t start = 0; start < n; start += batch_size) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(n, start + batch_size); ++i) idx.push_back(i);
        Graph g;
        int input = g.input(make_batch(data, idx));
        ForwardOutput f = net.forward(g, input, RunMode::Eval);
        Tensor bq_p = softmax_rows(g.value(f.bq_logits));
        const Tensor& pi_logits = g.value(f.pi_logits);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            int best_bq = 0, best_pi = 0;
            for (int c = 1; c < 4; ++c)
                if (bq_p.data[bq_p.idx2(i, c)] > bq_p.data[bq_p.idx2(i, best_bq)]) best_bq = c;
            for (int c = 1; c < net.config.num_pi_classes; ++c)
                if (pi_logits.data[pi_logits.idx2(i, c)] > pi_logits.data[pi_logits.idx2(i, best_pi)])
                    best_pi = c;
            bq_pred[idx[i]] = best_bq;
            pi_pred[idx[i]] = best_pi;
            bq_probs[idx[i]].assign(bq_p.data.begin() + static_cast<std::ptrdiff_t>(i * 4),
                                    bq_p.data.begin() + static_cast<std::ptrdiff_t>(i * 4 + 4));
        }
    }

    EvalResult out;
    out.slice_bq = make_report(data.bq, bq_pred, 4, "slice");
    out.slice_pi = make_report(data.pi, pi_pred, net.config.num_pi_classes, "slice");

    // group slices by (patient_id, vertebra_id), keeping first-seen order
    std::vector<std::pair<std::string, std::vector<std::size_t>>> groups;
    std::map<std::string, std::size_t> group_index;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string key = samples[i].patient_id + "/" + samples[i].vertebra_id;
        auto it = group_index.find(key);
        if (it == group_index.end()) {
            group_index.emplace(key, groups.size());
            groups.push_back({key, {i}});
        } else {
            groups[it->second].second.push_back(i);
        }
    }
    std::vector<int> v_truth, v_pred;
    for (const auto& [key, idx] : groups) {
        long truth_count[4] = {0, 0, 0, 0};
        std::vector<SlicePrediction> preds;
        for (std::size_t i : idx) {
            ++truth_count[samples[i].bq_label];
            preds.push_back({bq_pred[i], bq_probs[i]});
        }
        int majority = 0;
        for (int c = 1; c < 4; ++c)
            if (truth_count[c] > truth_count[majority]) majority = c;
        v_truth.push_back(majority);
        v_pred.push_back(vote_vertebra(preds, vote_threshold));
    }
    out.vertebra_bq = make_report(v_truth, v_pred, 4, "vertebra");
    return out;
}

}  // namespace mtspine
