#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtspine {

// Dense row-major n-d array of doubles with an optional gradient buffer.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until requested

    Tensor() = default;

    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), 0.0);
    }

    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel_of(shape))
            throw std::invalid_argument("Tensor: data length does not match shape");
    }

    static std::size_t numel_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<int> s, double v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    std::size_t numel() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }

    int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
    }

    // Flat index helpers for the two ranks the engine actually uses.
    std::size_t idx4(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w;
    }
    std::size_t idx2(int n, int k) const {
        return static_cast<std::size_t>(n) * shape[1] + k;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void check_finite(const char* where) const {
        for (double v : data)
            if (!std::isfinite(v))
                throw std::runtime_error(std::string("non-finite value in ") + where);
    }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Row-wise stabilized softmax on a [N,K] tensor.
inline Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw std::invalid_argument("softmax_rows: expected rank-2 input");
    const int n = logits.dim(0), k = logits.dim(1);
    Tensor out(logits.shape);
    for (int i = 0; i < n; ++i) {
        double mx = logits.data[logits.idx2(i, 0)];
        for (int j = 1; j < k; ++j) mx = std::max(mx, logits.data[logits.idx2(i, j)]);
        double z = 0.0;
        for (int j = 0; j < k; ++j) {
            double e = std::exp(logits.data[logits.idx2(i, j)] - mx);
            out.data[out.idx2(i, j)] = e;
            z += e;
        }
        for (int j = 0; j < k; ++j) out.data[out.idx2(i, j)] /= z;
    }
    return out;
}

}  // namespace mtspine
