#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "mtspine/tensor.hpp"

namespace mtspine {

enum class RunMode { Train, Eval };

// Running batch-norm statistics, owned by the network and mutated during
// train-mode forward passes.
struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;

    static BatchNormState init(int channels) {
        BatchNormState s;
        s.running_mean.assign(channels, 0.0);
        s.running_var.assign(channels, 1.0);
        return s;
    }
};

// Reverse-mode tape over a fixed operator set. Nodes are appended in
// construction order; backward visits them in exact reverse order.
class Graph {
  public:
    static constexpr double kBnEpsilon = 1e-5;
    static constexpr double kBnMomentum = 0.1;

    struct Node {
        Tensor value;
        std::vector<double> grad;
        std::function<void(Graph&)> back;  // may be empty for leaves
        Tensor* param = nullptr;           // set for parameter leaves
    };

    int size() const { return static_cast<int>(nodes_.size()); }
    const Tensor& value(int id) const { return nodes_.at(id).value; }
    const std::vector<double>& grad_of(int id) const { return nodes_.at(id).grad; }

    // Constant leaf (no gradient flows out of the graph).
    int input(Tensor t) {
        t.check_finite("graph input");
        return push(std::move(t), {}, nullptr);
    }

    // Parameter leaf; backward accumulates into p.grad.
    int param(Tensor& p) {
        p.check_finite("parameter");
        Tensor copy = p;
        int id = push(std::move(copy), {}, &p);
        return id;
    }

    // --- operators -------------------------------------------------------

    int conv2d(int in_id, int ker_id, int stride, int pad) {
        const Tensor& in = value(in_id);
        const Tensor& ker = value(ker_id);
        if (in.rank() != 4 || ker.rank() != 4)
            throw std::invalid_argument("conv2d: rank-4 tensors required");
        if (stride != 1 && stride != 2) throw std::invalid_argument("conv2d: stride must be 1 or 2");
        if (pad != 0 && pad != 1) throw std::invalid_argument("conv2d: pad must be 0 or 1");
        if (in.dim(1) != ker.dim(1))
            throw std::invalid_argument("conv2d: input channels " + std::to_string(in.dim(1)) +
                                        " do not match kernel channels " + std::to_string(ker.dim(1)));
        const int n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
        const int k = ker.dim(0), kh = ker.dim(2), kw = ker.dim(3);
        const int ho = (h + 2 * pad - kh) / stride + 1;
        const int wo = (w + 2 * pad - kw) / stride + 1;
        if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: non-positive output size");

        Tensor out({n, k, ho, wo});
        const double* x = in.data.data();
        const double* kd = ker.data.data();
        double* y = out.data.data();
        for (int ni = 0; ni < n; ++ni)
            for (int ki = 0; ki < k; ++ki)
                for (int ci = 0; ci < c; ++ci)
                    for (int r = 0; r < kh; ++r)
                        for (int s = 0; s < kw; ++s) {
                            const double kv = kd[((static_cast<std::size_t>(ki) * c + ci) * kh + r) * kw + s];
                            if (kv == 0.0) continue;
                            for (int oh = 0; oh < ho; ++oh) {
                                const int ih = oh * stride + r - pad;
                                if (ih < 0 || ih >= h) continue;
                                const double* xr = x + ((static_cast<std::size_t>(ni) * c + ci) * h + ih) * w;
                                double* yr = y + ((static_cast<std::size_t>(ni) * k + ki) * ho + oh) * wo;
                                for (int ow = 0; ow < wo; ++ow) {
                                    const int iw = ow * stride + s - pad;
                                    if (iw < 0 || iw >= w) continue;
                                    yr[ow] += kv * xr[iw];
                                }
                            }
                        }
        out.check_finite("conv2d");
        return push(std::move(out), [=](Graph& g) {
            Node& node = g.nodes_[g.cur_];
            const Tensor& inv = g.nodes_[in_id].value;
            const Tensor& kv = g.nodes_[ker_id].value;
            std::vector<double>& din = g.nodes_[in_id].grad;
            std::vector<double>& dker = g.nodes_[ker_id].grad;
            for (int ni = 0; ni < n; ++ni)
                for (int ki = 0; ki < k; ++ki)
                    for (int oh = 0; oh < ho; ++oh)
                        for (int ow = 0; ow < wo; ++ow) {
                            const double go = node.grad[((static_cast<std::size_t>(ni) * k + ki) * ho + oh) * wo + ow];
                            if (go == 0.0) continue;
                            for (int ci = 0; ci < c; ++ci)
                                for (int r = 0; r < kh; ++r) {
                                    const int ih = oh * stride + r - pad;
                                    if (ih < 0 || ih >= h) continue;
                                    for (int s = 0; s < kw; ++s) {
                                        const int iw = ow * stride + s - pad;
                                        if (iw < 0 || iw >= w) continue;
                                        const std::size_t xi = inv.idx4(ni, ci, ih, iw);
                                        const std::size_t kidx = kv.idx4(ki, ci, r, s);
                                        din[xi] += go * kv.data[kidx];
                                        dker[kidx] += go * inv.data[xi];
                                    }
                                }
                        }
        });
    }

    // BN over N,H,W per channel. Train mode uses batch statistics and updates
    // `state`; eval mode reads `state`.
    int batchnorm2d(int in_id, int gamma_id, int beta_id, BatchNormState& state, RunMode mode) {
        const Tensor& in = value(in_id);
        if (in.rank() != 4) throw std::invalid_argument("batchnorm2d: rank-4 input required");
        const int n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
        if (n * h * w == 0 || n == 0) throw std::invalid_argument("batchnorm2d: empty batch");
        const Tensor& gamma = value(gamma_id);
        const Tensor& beta = value(beta_id);
        if (static_cast<int>(gamma.numel()) != c || static_cast<int>(beta.numel()) != c)
            throw std::invalid_argument("batchnorm2d: gamma/beta length must equal channel count");
        if (static_cast<int>(state.running_mean.size()) != c)
            throw std::invalid_argument("batchnorm2d: running stats length mismatch");

        const std::size_t m = static_cast<std::size_t>(n) * h * w;
        std::vector<double> mean(c), var(c);
        if (mode == RunMode::Train) {
            for (int ci = 0; ci < c; ++ci) {
                double s = 0.0;
                for (int ni = 0; ni < n; ++ni)
                    for (int hi = 0; hi < h; ++hi)
                        for (int wi = 0; wi < w; ++wi) s += in.data[in.idx4(ni, ci, hi, wi)];
                mean[ci] = s / static_cast<double>(m);
                double sq = 0.0;
                for (int ni = 0; ni < n; ++ni)
                    for (int hi = 0; hi < h; ++hi)
                        for (int wi = 0; wi < w; ++wi) {
                            const double d = in.data[in.idx4(ni, ci, hi, wi)] - mean[ci];
                            sq += d * d;
                        }
                var[ci] = sq / static_cast<double>(m);
                const double unbiased = m > 1 ? sq / static_cast<double>(m - 1) : var[ci];
                state.running_mean[ci] = (1.0 - kBnMomentum) * state.running_mean[ci] + kBnMomentum * mean[ci];
                state.running_var[ci] = (1.0 - kBnMomentum) * state.running_var[ci] + kBnMomentum * unbiased;
            }
        } else {
            mean = state.running_mean;
            var = state.running_var;
        }

        Tensor out(in.shape);
        std::vector<double> inv_std(c);
        for (int ci = 0; ci < c; ++ci) inv_std[ci] = 1.0 / std::sqrt(var[ci] + kBnEpsilon);
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci)
                for (int hi = 0; hi < h; ++hi)
                    for (int wi = 0; wi < w; ++wi) {
                        const std::size_t i = in.idx4(ni, ci, hi, wi);
                        out.data[i] = gamma.data[ci] * (in.data[i] - mean[ci]) * inv_std[ci] + beta.data[ci];
                    }
        out.check_finite("batchnorm2d");

        const bool train = (mode == RunMode::Train);
        return push(std::move(out), [=](Graph& g) {
            Node& node = g.nodes_[g.cur_];
            const Tensor& inv = g.nodes_[in_id].value;
            const Tensor& gam = g.nodes_[gamma_id].value;
            std::vector<double>& din = g.nodes_[in_id].grad;
            std::vector<double>& dgamma = g.nodes_[gamma_id].grad;
            std::vector<double>& dbeta = g.nodes_[beta_id].grad;
            const double md = static_cast<double>(m);
            for (int ci = 0; ci < c; ++ci) {
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (int ni = 0; ni < n; ++ni)
                    for (int hi = 0; hi < h; ++hi)
                        for (int wi = 0; wi < w; ++wi) {
                            const std::size_t i = inv.idx4(ni, ci, hi, wi);
                            const double xhat = (inv.data[i] - mean[ci]) * inv_std[ci];
                            sum_dy += node.grad[i];
                            sum_dy_xhat += node.grad[i] * xhat;
                        }
                dbeta[ci] += sum_dy;
                dgamma[ci] += sum_dy_xhat;
                const double a = gam.data[ci] * inv_std[ci];
                for (int ni = 0; ni < n; ++ni)
                    for (int hi = 0; hi < h; ++hi)
                        for (int wi = 0; wi < w; ++wi) {
                            const std::size_t i = inv.idx4(ni, ci, hi, wi);
                            if (train) {
                                const double xhat = (inv.data[i] - mean[ci]) * inv_std[ci];
                                din[i] += a * (node.grad[i] - sum_dy / md - xhat * sum_dy_xhat / md);
                            } else {
                                din[i] += a * node.grad[i];
                            }
                        }
            }
        });
    }

    int relu(int in_id) {
        const Tensor& in = value(in_id);
        Tensor out(in.shape);
        for (std::size_t i = 0; i < in.numel(); ++i) out.data[i] = in.data[i] > 0.0 ? in.data[i] : 0.0;
        return push(std::move(out), [=](Graph& g) {
            Node& node = g.nodes_[g.cur_];
            const Tensor& inv = g.nodes_[in_id].value;
            std::vector<double>& din = g.nodes_[in_id].grad;
            for (std::size_t i = 0; i < inv.numel(); ++i)
                if (inv.data[i] > 0.0) din[i] += node.grad[i];
        });
    }

    int tanh_(int in_id) {
        const Tensor& in = value(in_id);
        Tensor out(in.shape);
        for (std::size_t i = 0; i < in.numel(); ++i) out.data[i] = std::tanh(in.data[i]);
        return push(std::move(out), [=](Graph& g) {
            Node& node = g.nodes_[g.cur_];
            std::vector<double>& din = g.nodes_[in_id].grad;
            for (std::size_t i = 0; i < node.value.numel(); ++i) {
                const double t = node.value.data[i];
                din[i] += node.grad[i] * (1.0 - t * t);
            }
        });
    }

    // y = x W^T + b with x:[N,D], W:[O,D], b:[O].
    int linear(int in_id, int w_id, int b_id) {
        const Tensor& in = value(in_id);
        const Tensor& wt = value(w_id);
        const Tensor& bt = value(b_id);
        if (in.rank() != 2 || wt.rank() != 2)
            throw std::invalid_argument("linear: rank-2 input and weight required");
        if (in.dim(1) != wt.dim(1))
            throw std::invalid_argument("linear: feature size mismatch");
        const int n = in.dim(0), d = in.dim(1), o = wt.dim(0);
        if (static_cast<int>(bt.numel()) != o) throw std::invalid_argument("linear: bias length mismatch");
        Tensor out({n, o});
        for (int ni = 0; ni < n; ++ni)
            for (int oi = 0; oi < o; ++oi) {
                double s = bt.data[oi];
                for (int di = 0; di < d; ++di)
                    s += in.data[in.idx2(ni, di)] * wt.data[wt.idx2(oi, di)];
                out.data[out.idx2(ni, oi)] = s;
            }
        out.check_finite("linear");
        return push(std::move(out), [=](Graph& g) {
            Node& node = g.nodes_[g.cur_];
            const Tensor& inv = g.nodes_[in_id].value;
            const Tensor& wv = g.nodes_[w_id].value;
            std::vector<double>& din = g.nodes_[in_id].grad;
            std::vector<double>& dw = g.nodes_[w_id].grad;
            std::vector<double>& db = g.nodes_[b_id].grad;
            for (int ni = 0; ni < n; ++ni)
                for (int oi = 0; oi < o; ++oi) {
                    const double go = node.grad[node.value.idx2(ni, oi)];
                    if (go == 0.0) continue;
                    db[oi] += go;
                    for (int di = 0; di < d; ++di) {
                        din[inv.idx2(ni, di)] += go * wv.data[wv.idx2(oi, di)];
                        dw[wv.idx2(oi, di)] += go * inv.data[inv.idx2(ni, di)];
                    }
                }
        });
    }

    // Concatenate along dim 1 (channels for rank-4, features for rank-2).
    int concat_channels(const std::vector<int>& ids) {
        if (ids.empty()) throw std::invalid_argument("concat_channels: no inputs");
        const Tensor& first = value(ids[0]);
        const int rank = first.rank();
        if (rank != 2 && rank != 4) throw std::invalid_argument("concat_channels: rank 2 or 4 required");
        int total_c = 0;
        for (int id : ids) {
            const Tensor& t = value(id);
            if (t.rank() != rank) throw std::invalid_argument("concat_channels: mixed ranks");
            if (t.dim(0) != first.dim(0)) throw std::invalid_argument("concat_channels: batch mismatch");
            if (rank == 4 && (t.dim(2) != first.dim(2) || t.dim(3) != first.dim(3)))
                throw std::invalid_argument("concat_channels: spatial mismatch");
            total_c += t.dim(1);
        }
        std::vector<int> oshape = first.shape;
        oshape[1] = total_c;
        Tensor out(oshape);
        const int n = first.dim(0);
        const std::size_t inner = rank == 4 ? static_cast<std::size_t>(first.dim(2)) * first.dim(3) : 1;
        for (int ni = 0; ni < n; ++ni) {
            std::size_t off = 0;
            for (int id : ids) {
                const Tensor& t = value(id);
                const std::size_t chunk = static_cast<std::size_t>(t.dim(1)) * inner;
                std::copy_n(t.data.begin() + static_cast<std::ptrdiff_t>(ni * chunk),
                            chunk,
                            out.data.begin() + static_cast<std::ptrdiff_t>(ni * total_c * inner + off));
                off += chunk;
            }
        }
        std::vector<int> in_ids = ids;
        return push(std::move(out), [=](Graph& g) {
            Node& node = g.nodes_[g.cur_];
            for (int ni = 0; ni < n; ++ni) {
                std::size_t off = 0;
                for (int id : in_ids) {
                    Node& src = g.nodes_[id];
                    const std::size_t chunk = static_cast<std::size_t>(src.value.dim(1)) * inner;
                    const std::size_t base = static_cast<std::size_t>(ni) * total_c * inner + off;
                    for (std::size_t i = 0; i < chunk; ++i)
                        src.grad[ni * chunk + i] += node.grad[base + i];
                    off += chunk;
                }
            }
        });
    }

    // Channel slice [c0,c1) along dim 1; inverse of concat at the same boundary.
    int slice_channels(int in_id, int c0, int c1) {
        const Tensor& in = value(in_id);
        const int rank = in.rank();
        if (rank != 2 && rank != 4) throw std::invalid_argument("slice_channels: rank 2 or 4 required");
        if (c0 < 0 || c1 <= c0 || c1 > in.dim(1)) throw std::invalid_argument("slice_channels: bad range");
        std::vector<int> oshape = in.shape;
        oshape[1] = c1 - c0;
        Tensor out(oshape);
        const int n = in.dim(0);
        const std::size_t inner = rank == 4 ? static_cast<std::size_t>(in.dim(2)) * in.dim(3) : 1;
        const std::size_t in_c = static_cast<std::size_t>(in.dim(1));
        const std::size_t out_c = static_cast<std::size_t>(c1 - c0);
        for (int ni = 0; ni < n; ++ni)
            std::copy_n(in.data.begin() + static_cast<std::ptrdiff_t>((ni * in_c + c0) * inner),
                        out_c * inner,
                        out.data.begin() + static_cast<std::ptrdiff_t>(ni * out_c * inner));
        return push(std::move(out), [=](Graph& g) {
            Node& node = g.nodes_[g.cur_];
            std::vector<double>& din = g.nodes_[in_id].grad;
            for (int ni = 0; ni < n; ++ni)
                for (std::size_t i = 0; i < out_c * inner; ++i)
                    din[(ni * in_c + c0) * inner + i] += node.grad[ni * out_c * inner + i];
        });
    }

    int avg_pool2x2(int in_id) {
        const Tensor& in = value(in_id);
        if (in.rank() != 4) throw std::invalid_argument("avg_pool2x2: rank-4 input required");
        const int n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
        if (h % 2 != 0 || w % 2 != 0) throw std::invalid_argument("avg_pool2x2: odd spatial size");
        Tensor out({n, c, h / 2, w / 2});
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci)
                for (int oh = 0; oh < h / 2; ++oh)
                    for (int ow = 0; ow < w / 2; ++ow) {
                        double s = in.data[in.idx4(ni, ci, 2 * oh, 2 * ow)] +
                                   in.data[in.idx4(ni, ci, 2 * oh, 2 * ow + 1)] +
                                   in.data[in.idx4(ni, ci, 2 * oh + 1, 2 * ow)] +
                                   in.data[in.idx4(ni, ci, 2 * oh + 1, 2 * ow + 1)];
                        out.data[out.idx4(ni, ci, oh, ow)] = s * 0.25;
                    }
        return push(std::move(out), [=](Graph& g) {
            Node& node = g.nodes_[g.cur_];
            const Tensor& inv = g.nodes_[in_id].value;
            std::vector<double>& din = g.nodes_[in_id].grad;
            for (int ni = 0; ni < n; ++ni)
                for (int ci = 0; ci < c; ++ci)
                    for (int oh = 0; oh < h / 2; ++oh)
                        for (int ow = 0; ow < w / 2; ++ow) {
                            const double go = 0.25 * node.grad[node.value.idx4(ni, ci, oh, ow)];
                            din[inv.idx4(ni, ci, 2 * oh, 2 * ow)] += go;
                            din[inv.idx4(ni, ci, 2 * oh, 2 * ow + 1)] += go;
                            din[inv.idx4(ni, ci, 2 * oh + 1, 2 * ow)] += go;
                            din[inv.idx4(ni, ci, 2 * oh + 1, 2 * ow + 1)] += go;
                        }
        });
    }

    int global_avg_pool(int in_id) {
        const Tensor& in = value(in_id);
        if (in.rank() != 4) throw std::invalid_argument("global_avg_pool: rank-4 input required");
        const int n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
        const double inv_hw = 1.0 / (static_cast<double>(h) * w);
        Tensor out({n, c});
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci) {
                double s = 0.0;
                for (int hi = 0; hi < h; ++hi)
                    for (int wi = 0; wi < w; ++wi) s += in.data[in.idx4(ni, ci, hi, wi)];
                out.data[out.idx2(ni, ci)] = s * inv_hw;
            }
        return push(std::move(out), [=](Graph& g) {
            Node& node = g.nodes_[g.cur_];
            const Tensor& inv = g.nodes_[in_id].value;
            std::vector<double>& din = g.nodes_[in_id].grad;
            for (int ni = 0; ni < n; ++ni)
                for (int ci = 0; ci < c; ++ci) {
                    const double go = node.grad[node.value.idx2(ni, ci)] * inv_hw;
                    for (int hi = 0; hi < h; ++hi)
                        for (int wi = 0; wi < w; ++wi) din[inv.idx4(ni, ci, hi, wi)] += go;
                }
        });
    }

    // Per-sample cross entropy against fixed target distributions:
    // loss_i = -sum_k y_ik log softmax(logits_i)_k. Targets carry no gradient.
    int softmax_cross_entropy(int logits_id, const Tensor& targets) {
        const Tensor& logits = value(logits_id);
        if (logits.rank() != 2 || targets.rank() != 2 || !logits.same_shape(targets))
            throw std::invalid_argument("softmax_cross_entropy: [N,K] logits/targets required");
        const int n = logits.dim(0), k = logits.dim(1);
        if (k < 2) throw std::invalid_argument("softmax_cross_entropy: K >= 2 required");
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int j = 0; j < k; ++j) s += targets.data[targets.idx2(i, j)];
            if (std::abs(s - 1.0) > 1e-9)
                throw std::invalid_argument("softmax_cross_entropy: target row " + std::to_string(i) +
                                            " does not sum to 1");
        }
        Tensor probs = softmax_rows(logits);
        Tensor out({n});
        for (int i = 0; i < n; ++i) {
            double mx = logits.data[logits.idx2(i, 0)];
            for (int j = 1; j < k; ++j) mx = std::max(mx, logits.data[logits.idx2(i, j)]);
            double lse = 0.0;
            for (int j = 0; j < k; ++j) lse += std::exp(logits.data[logits.idx2(i, j)] - mx);
            lse = std::log(lse) + mx;
            double l = 0.0;
            for (int j = 0; j < k; ++j)
                l += targets.data[targets.idx2(i, j)] * (lse - logits.data[logits.idx2(i, j)]);
            out.data[i] = l;
        }
        out.check_finite("softmax_cross_entropy");
        Tensor tg = targets;
        return push(std::move(out), [=, probs = std::move(probs), tg = std::move(tg)](Graph& g) {
            Node& node = g.nodes_[g.cur_];
            std::vector<double>& din = g.nodes_[logits_id].grad;
            for (int i = 0; i < n; ++i) {
                const double go = node.grad[i];
                if (go == 0.0) continue;
                for (int j = 0; j < k; ++j)
                    din[probs.idx2(i, j)] += go * (probs.data[probs.idx2(i, j)] - tg.data[tg.idx2(i, j)]);
            }
        });
    }

    int add(int a_id, int b_id) {
        const Tensor& a = value(a_id);
        const Tensor& b = value(b_id);
        if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
        Tensor out(a.shape);
        for (std::size_t i = 0; i < a.numel(); ++i) out.data[i] = a.data[i] + b.data[i];
        return push(std::move(out), [=](Graph& g) {
            Node& node = g.nodes_[g.cur_];
            std::vector<double>& da = g.nodes_[a_id].grad;
            std::vector<double>& db = g.nodes_[b_id].grad;
            for (std::size_t i = 0; i < node.value.numel(); ++i) {
                da[i] += node.grad[i];
                db[i] += node.grad[i];
            }
        });
    }

    int mul(int a_id, int b_id) {
        const Tensor& a = value(a_id);
        const Tensor& b = value(b_id);
        if (!a.same_shape(b)) throw std::invalid_argument("mul: shape mismatch");
        Tensor out(a.shape);
        for (std::size_t i = 0; i < a.numel(); ++i) out.data[i] = a.data[i] * b.data[i];
        return push(std::move(out), [=](Graph& g) {
            Node& node = g.nodes_[g.cur_];
            const Tensor& av = g.nodes_[a_id].value;
            const Tensor& bv = g.nodes_[b_id].value;
            std::vector<double>& da = g.nodes_[a_id].grad;
            std::vector<double>& db = g.nodes_[b_id].grad;
            for (std::size_t i = 0; i < node.value.numel(); ++i) {
                da[i] += node.grad[i] * bv.data[i];
                db[i] += node.grad[i] * av.data[i];
            }
        });
    }

    int scale(int in_id, double c) {
        const Tensor& in = value(in_id);
        Tensor out(in.shape);
        for (std::size_t i = 0; i < in.numel(); ++i) out.data[i] = c * in.data[i];
        return push(std::move(out), [=](Graph& g) {
            Node& node = g.nodes_[g.cur_];
            std::vector<double>& din = g.nodes_[in_id].grad;
            for (std::size_t i = 0; i < node.value.numel(); ++i) din[i] += c * node.grad[i];
        });
    }

    int sum(int in_id) {
        const Tensor& in = value(in_id);
        double s = std::accumulate(in.data.begin(), in.data.end(), 0.0);
        return push(Tensor::scalar(s), [=](Graph& g) {
            Node& node = g.nodes_[g.cur_];
            std::vector<double>& din = g.nodes_[in_id].grad;
            for (double& d : din) d += node.grad[0];
        });
    }

    // (1/n) * sum_i w_i x_i over a rank-1 tensor; weights are constants.
    int weighted_mean(int in_id, std::vector<double> weights) {
        const Tensor& in = value(in_id);
        if (in.rank() != 1) throw std::invalid_argument("weighted_mean: rank-1 input required");
        if (weights.size() != in.numel()) throw std::invalid_argument("weighted_mean: length mismatch");
        const double inv_n = 1.0 / static_cast<double>(in.numel());
        double s = 0.0;
        for (std::size_t i = 0; i < in.numel(); ++i) s += weights[i] * in.data[i];
        return push(Tensor::scalar(s * inv_n), [=, w = std::move(weights)](Graph& g) {
            Node& node = g.nodes_[g.cur_];
            std::vector<double>& din = g.nodes_[in_id].grad;
            for (std::size_t i = 0; i < din.size(); ++i) din[i] += node.grad[0] * w[i] * inv_n;
        });
    }

    // Squared Frobenius distance: sum (a-b)^2, differentiable in both sides.
    int sq_diff_sum(int a_id, int b_id) {
        const Tensor& a = value(a_id);
        const Tensor& b = value(b_id);
        if (!a.same_shape(b)) throw std::invalid_argument("sq_diff_sum: shape mismatch");
        double s = 0.0;
        for (std::size_t i = 0; i < a.numel(); ++i) {
            const double d = a.data[i] - b.data[i];
            s += d * d;
        }
        return push(Tensor::scalar(s), [=](Graph& g) {
            Node& node = g.nodes_[g.cur_];
            const Tensor& av = g.nodes_[a_id].value;
            const Tensor& bv = g.nodes_[b_id].value;
            std::vector<double>& da = g.nodes_[a_id].grad;
            std::vector<double>& db = g.nodes_[b_id].grad;
            for (std::size_t i = 0; i < av.numel(); ++i) {
                const double d = 2.0 * (av.data[i] - bv.data[i]) * node.grad[0];
                da[i] += d;
                db[i] -= d;
            }
        });
    }

    // --- backward --------------------------------------------------------

    // Seeds the scalar root with gradient 1 and sweeps the tape in reverse
    // construction order. Parameter leaves accumulate into Tensor::grad.
    void backward(int root) {
        if (root < 0 || root >= size()) throw std::invalid_argument("backward: bad root id");
        if (nodes_[root].value.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
        for (Node& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
        nodes_[root].grad[0] = 1.0;
        for (int i = root; i >= 0; --i) {
            cur_ = i;
            Node& n = nodes_[i];
            if (n.back) {
                n.back(*this);
            } else if (n.param) {
                n.param->ensure_grad();
                for (std::size_t j = 0; j < n.grad.size(); ++j) n.param->grad[j] += n.grad[j];
            }
        }
    }

  private:
    int push(Tensor out, std::function<void(Graph&)> back, Tensor* param = nullptr) {
        Node n;
        n.value = std::move(out);
        n.grad.assign(n.value.numel(), 0.0);
        n.back = std::move(back);
        n.param = param;
        nodes_.push_back(std::move(n));
        return size() - 1;
    }

    std::vector<Node> nodes_;
    int cur_ = -1;  // node being differentiated during backward
};

}  // namespace mtspine
