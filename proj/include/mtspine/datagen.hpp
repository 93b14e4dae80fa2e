#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtspine/tensor.hpp"

namespace mtspine {

// Bone-quality classes, fixed order everywhere.
enum BqLabel : int { BqNormal = 0, BqBlastic = 1, BqMixed = 2, BqLytic = 3 };
// Posterolateral involvement classes.
enum PiLabel : int { PiNone = 0, PiUnilateral = 1, PiBilateral = 2 };

constexpr double kHuMin = -1024.0;
constexpr double kHuMax = 3071.0;

struct SliceSample {
    Tensor image;  // [H,W] HU values
    int bq_label = BqNormal;
    int pi_label = PiNone;
    std::string patient_id;
    std::string vertebra_id;
};

struct DecomposedLabel {
    int blastic = 0;
    int lytic = 0;
};

// Normal<->(0,0), Blastic<->(1,0), Lytic<->(0,1), Mixed<->(1,1).
inline DecomposedLabel decompose_label(int bq) {
    switch (bq) {
        case BqNormal: return {0, 0};
        case BqBlastic: return {1, 0};
        case BqMixed: return {1, 1};
        case BqLytic: return {0, 1};
    }
    throw std::invalid_argument("decompose_label: invalid bone-quality label");
}

inline int recompose_label(const DecomposedLabel& d) {
    if (d.blastic && d.lytic) return BqMixed;
    if (d.blastic) return BqBlastic;
    if (d.lytic) return BqLytic;
    return BqNormal;
}

struct PhantomSpec {
    unsigned seed = 0;
    int height = 64;
    int width = 64;
    // counts[bq][pi] = number of slices to generate for that cell
    std::array<std::array<int, 3>, 4> counts{};
    int slices_per_vertebra = 5;
    double noise_std = 20.0;       // HU
    double label_noise_rate = 0.0;
    int max_total = 200000;

    static PhantomSpec balanced(unsigned seed, int per_cell, int h = 64, int w = 64) {
        PhantomSpec s;
        s.seed = seed;
        s.height = h;
        s.width = w;
        for (auto& row : s.counts) row = {per_cell, per_cell, per_cell};
        return s;
    }
};

struct PhantomSet {
    std::vector<SliceSample> samples;
    std::vector<int> clean_bq;  // pre-noise labels, parallel to samples
};

// Phantom geometry, shared with the test-side oracle: a centered ellipse of
// trabecular bone in soft tissue; lesions are discs inside it.
struct PhantomGeometry {
    double cx, cy, a, b;
    static PhantomGeometry of(int h, int w) {
        return {w / 2.0, h / 2.0, 0.36 * w, 0.30 * h};
    }
    bool inside(double x, double y) const {
        const double dx = (x - cx) / a, dy = (y - cy) / b;
        return dx * dx + dy * dy <= 1.0;
    }
};

namespace detail {

inline void fill_disc(Tensor& img, double cx, double cy, double r, double hu_mean,
                      double noise_std, std::mt19937_64& rng) {
    std::normal_distribution<double> n(hu_mean, noise_std);
    const int h = img.dim(0), w = img.dim(1);
    for (int y = std::max(0, static_cast<int>(cy - r)); y < std::min(h, static_cast<int>(cy + r + 1)); ++y)
        for (int x = std::max(0, static_cast<int>(cx - r)); x < std::min(w, static_cast<int>(cx + r + 1)); ++x) {
            const double dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy <= r * r)
                img.data[static_cast<std::size_t>(y) * w + x] =
                    std::clamp(noise_std > 0.0 ? n(rng) : hu_mean, kHuMin, kHuMax);
        }
}

}  // namespace detail

// HU palette of the generator: soft tissue 40, bone 400, blastic lesion 900,
// lytic lesion 20, posterolateral involvement 650.
inline PhantomSet generate_phantoms(const PhantomSpec& spec) {
    long total = 0;
    for (const auto& row : spec.counts)
        for (int c : row) {
            if (c < 0) throw std::invalid_argument("generate_phantoms: negative count");
            total += c;
        }
    if (total > spec.max_total) throw std::invalid_argument("generate_phantoms: counts exceed max_total");
    if (spec.slices_per_vertebra <= 0)
        throw std::invalid_argument("generate_phantoms: slices_per_vertebra must be positive");

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> soft(40.0, spec.noise_std);
    std::normal_distribution<double> bone(400.0, spec.noise_std);
    std::uniform_real_distribution<double> jitter(-1.5, 1.5);
    std::uniform_int_distribution<int> coin(0, 1);

    PhantomSet out;
    const auto geom = PhantomGeometry::of(spec.height, spec.width);
    const double lesion_r = 0.33 * std::min(geom.a, geom.b);
    const double pi_r = 0.28 * std::min(geom.a, geom.b);
    int vertebra_counter = 0;

    for (int bq = 0; bq < 4; ++bq)
        for (int pi = 0; pi < 3; ++pi) {
            const int n = spec.counts[bq][pi];
            for (int i = 0; i < n; ++i) {
                if (i % spec.slices_per_vertebra == 0) ++vertebra_counter;
                SliceSample s;
                s.image = Tensor({spec.height, spec.width});
                for (double& v : s.image.data)
                    v = std::clamp(spec.noise_std > 0.0 ? soft(rng) : 40.0, kHuMin, kHuMax);
                for (int y = 0; y < spec.height; ++y)
                    for (int x = 0; x < spec.width; ++x)
                        if (geom.inside(x, y))
                            s.image.data[static_cast<std::size_t>(y) * spec.width + x] =
                                std::clamp(spec.noise_std > 0.0 ? bone(rng) : 400.0, kHuMin, kHuMax);

                const double jx = jitter(rng), jy = jitter(rng);
                // lesion discs sit centrally, offset left/right for mixed
                if (bq == BqBlastic)
                    detail::fill_disc(s.image, geom.cx + jx, geom.cy + jy, lesion_r, 900.0,
                                      spec.noise_std, rng);
                else if (bq == BqLytic)
                    detail::fill_disc(s.image, geom.cx + jx, geom.cy + jy, lesion_r, 20.0,
                                      spec.noise_std, rng);
                else if (bq == BqMixed) {
                    detail::fill_disc(s.image, geom.cx - 0.45 * geom.a + jx, geom.cy + jy,
                                      0.8 * lesion_r, 900.0, spec.noise_std, rng);
                    detail::fill_disc(s.image, geom.cx + 0.45 * geom.a + jx, geom.cy + jy,
                                      0.8 * lesion_r, 20.0, spec.noise_std, rng);
                }
                // posterolateral sectors: lower-left / lower-right of the ellipse
                const int side = coin(rng);  // drawn unconditionally to keep the stream aligned
                const double px_l = geom.cx - 0.55 * geom.a, px_r = geom.cx + 0.55 * geom.a;
                const double py = geom.cy + 0.55 * geom.b;
                if (pi == PiUnilateral)
                    detail::fill_disc(s.image, side ? px_r : px_l, py, pi_r, 650.0, spec.noise_std, rng);
                else if (pi == PiBilateral) {
                    detail::fill_disc(s.image, px_l, py, pi_r, 650.0, spec.noise_std, rng);
                    detail::fill_disc(s.image, px_r, py, pi_r, 650.0, spec.noise_std, rng);
                }

                s.bq_label = bq;
                s.pi_label = pi;
                s.patient_id = "p" + std::to_string(vertebra_counter / 4);
                s.vertebra_id = "v" + std::to_string(vertebra_counter);
                out.clean_bq.push_back(bq);
                out.samples.push_back(std::move(s));
            }
        }

    if (spec.label_noise_rate > 0.0) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::uniform_int_distribution<int> pick(0, 2);
        for (auto& s : out.samples)
            if (u(rng) < spec.label_noise_rate) {
                int k = pick(rng);
                for (int c = 0; c < 4; ++c)
                    if (c != s.bq_label && k-- == 0) {
                        s.bq_label = c;
                        break;
                    }
            }
    }
    return out;
}

// Binarize at hu_threshold, find the largest above-threshold 4-connected
// component, crop an out-size window centered on its bounding box (clamped),
// and normalize to [0,1] over the fixed HU window. Empty mask -> center crop.
inline Tensor threshold_crop(const Tensor& image, double hu_threshold, int out_h, int out_w) {
    if (image.rank() != 2) throw std::invalid_argument("threshold_crop: rank-2 image required");
    const int h = image.dim(0), w = image.dim(1);
    if (out_h > h || out_w > w) throw std::invalid_argument("threshold_crop: out size exceeds image");

    std::vector<int> comp(static_cast<std::size_t>(h) * w, -1);
    int best_comp = -1;
    long best_size = 0;
    int best_r0 = 0, best_r1 = 0, best_c0 = 0, best_c1 = 0;
    int next = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            if (image.data[i] <= hu_threshold || comp[i] != -1) continue;
            // BFS flood fill
            int r0 = y, r1 = y, c0 = x, c1 = x;
            long size = 0;
            std::deque<std::pair<int, int>> q{{y, x}};
            comp[i] = next;
            while (!q.empty()) {
                auto [cy, cx] = q.front();
                q.pop_front();
                ++size;
                r0 = std::min(r0, cy); r1 = std::max(r1, cy);
                c0 = std::min(c0, cx); c1 = std::max(c1, cx);
                const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
                for (int d = 0; d < 4; ++d) {
                    const int ny = cy + dy[d], nx = cx + dx[d];
                    if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                    const std::size_t j = static_cast<std::size_t>(ny) * w + nx;
                    if (image.data[j] > hu_threshold && comp[j] == -1) {
                        comp[j] = next;
                        q.emplace_back(ny, nx);
                    }
                }
            }
            if (size > best_size) {
                best_size = size;
                best_comp = next;
                best_r0 = r0; best_r1 = r1; best_c0 = c0; best_c1 = c1;
            }
            ++next;
        }

    int center_y, center_x;
    if (best_comp == -1) {
        center_y = h / 2;
        center_x = w / 2;
    } else {
        center_y = (best_r0 + best_r1) / 2;
        center_x = (best_c0 + best_c1) / 2;
    }
    int y0 = std::clamp(center_y - out_h / 2, 0, h - out_h);
    int x0 = std::clamp(center_x - out_w / 2, 0, w - out_w);

    Tensor out({out_h, out_w});
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            const double hu = image.data[static_cast<std::size_t>(y0 + y) * w + (x0 + x)];
            out.data[static_cast<std::size_t>(y) * out_w + x] =
                (std::clamp(hu, kHuMin, kHuMax) - kHuMin) / (kHuMax - kHuMin);
        }
    return out;
}

// Cap each bone-quality class at per_class_cap samples, uniform without
// replacement, preserving relative order within each class.
inline std::vector<SliceSample> balance_subsample(const std::vector<SliceSample>& samples,
                                                  int per_class_cap, unsigned seed) {
    if (per_class_cap <= 0) throw std::invalid_argument("balance_subsample: cap must be positive");
    std::mt19937_64 rng(seed);
    std::vector<char> keep(samples.size(), 0);
    for (int c = 0; c < 4; ++c) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < samples.size(); ++i)
            if (samples[i].bq_label == c) idx.push_back(i);
        if (static_cast<int>(idx.size()) <= per_class_cap) {
            for (std::size_t i : idx) keep[i] = 1;
            continue;
        }
        // partial Fisher-Yates over positions, then restore in-class order via keep[]
        for (int k = 0; k < per_class_cap; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, idx.size() - 1);
            std::swap(idx[k], idx[pick(rng)]);
            keep[idx[k]] = 1;
        }
    }
    std::vector<SliceSample> out;
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (keep[i]) out.push_back(samples[i]);
    return out;
}

}  // namespace mtspine
