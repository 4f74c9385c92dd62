#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <utility>
#include <vector>

#include "lss/core.hpp"
#include "lss/rng.hpp"

namespace lss {

// ---------------------------------------------------------------------------
// Non-local means
// ---------------------------------------------------------------------------

struct NlmParams {
    double h = 0.08;        // decay of the patch-similarity weights, intensity units
    int patch_radius = 1;   // 3x3 comparison patches
    int search_radius = 5;  // 11x11 search window

    void validate() const {
        if (!(h > 0.0)) throw ParameterError("NlmParams: h must be > 0");
        if (patch_radius < 1 || search_radius < 1)
            throw ParameterError("NlmParams: radii must be >= 1");
        if (search_radius < patch_radius)
            throw ParameterError("NlmParams: search_radius must be >= patch_radius");
    }
};

namespace detail {

inline double patch_sq_dist(const GrayImage& img, int r0, int c0, int r1, int c1, int pr) {
    double d = 0.0;
    for (int dr = -pr; dr <= pr; ++dr) {
        for (int dc = -pr; dc <= pr; ++dc) {
            const double diff =
                img.at_clamped(r0 + dr, c0 + dc) - img.at_clamped(r1 + dr, c1 + dc);
            d += diff * diff;
        }
    }
    return d;
}

}  // namespace detail

// Weighted average over the search window, weights exp(-||N_i - N_j||^2 / h^2).
// Computed in difference form (x_i + sum w*(x_j - x_i) / sum w) so constant
// images pass through bit-exactly. The self weight is capped at the largest
// non-self weight in the window, the usual refinement against impulse
// self-bias.
inline GrayImage nlm_denoise(const GrayImage& img, const NlmParams& p) {
    p.validate();
    const double inv_h2 = 1.0 / (p.h * p.h);
    GrayImage out(img.height, img.width);

    std::vector<double> weights;
    std::vector<double> values;
    const int sr = p.search_radius;
    weights.reserve(static_cast<size_t>(2 * sr + 1) * (2 * sr + 1));
    values.reserve(weights.capacity());

    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            weights.clear();
            values.clear();
            double max_non_self = 0.0;
            size_t self_idx = 0;
            for (int dr = -sr; dr <= sr; ++dr) {
                for (int dc = -sr; dc <= sr; ++dc) {
                    const int rr = std::clamp(r + dr, 0, img.height - 1);
                    const int cc = std::clamp(c + dc, 0, img.width - 1);
                    if (dr == 0 && dc == 0) {
                        self_idx = weights.size();
                        weights.push_back(1.0);  // replaced by the cap below
                        values.push_back(img.at(rr, cc));
                        continue;
                    }
                    const double d2 = detail::patch_sq_dist(img, r, c, rr, cc, p.patch_radius);
                    const double w = std::exp(-d2 * inv_h2);
                    max_non_self = std::max(max_non_self, w);
                    weights.push_back(w);
                    values.push_back(img.at(rr, cc));
                }
            }
            weights[self_idx] = max_non_self > 0.0 ? max_non_self : 1.0;

            const double center = img.at(r, c);
            double z = 0.0, acc = 0.0;
            for (size_t i = 0; i < weights.size(); ++i) {
                z += weights[i];
                acc += weights[i] * (values[i] - center);
            }
            out.at(r, c) = clamp01(center + acc / z);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Otsu thresholding
// ---------------------------------------------------------------------------

struct OtsuResult {
    double threshold = 0.0;
    BinaryMask mask;
};

inline int otsu_bin(double v) {
    int b = static_cast<int>(v * 256.0);
    return std::clamp(b, 0, 255);
}

// Maximizes between-class variance over a 256-bin histogram of [0,1].
// Ties break toward the lower threshold. The returned threshold is the bin
// boundary (t+1)/256, so mask = (v > threshold) reproduces the bin split for
// any value not exactly on the boundary.
inline OtsuResult otsu_threshold(const GrayImage& img) {
    std::array<double, 256> hist{};
    for (double v : img.data) hist[otsu_bin(v)] += 1.0;

    const double total = static_cast<double>(img.size());
    double sum_all = 0.0;
    for (int i = 0; i < 256; ++i) sum_all += i * hist[i];

    int best_t = -1;
    double best_var = -1.0;
    double w0 = 0.0, sum0 = 0.0;
    for (int t = 0; t < 255; ++t) {
        w0 += hist[t];
        sum0 += t * hist[t];
        const double w1 = total - w0;
        if (w0 <= 0.0 || w1 <= 0.0) continue;
        const double mu0 = sum0 / w0;
        const double mu1 = (sum_all - sum0) / w1;
        const double var_b = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (var_b > best_var) {
            best_var = var_b;
            best_t = t;
        }
    }
    if (best_t < 0 || best_var <= 0.0)
        throw DegenerateInputError("otsu_threshold: no separating threshold (constant image)");

    OtsuResult res;
    res.threshold = (best_t + 1) / 256.0;
    res.mask = BinaryMask(img.height, img.width);
    for (size_t i = 0; i < img.size(); ++i)
        res.mask.bits[i] = img.data[i] > res.threshold ? 1 : 0;
    return res;
}

// ---------------------------------------------------------------------------
// Canny edges
// ---------------------------------------------------------------------------

namespace detail {

inline GrayImage gaussian_blur(const GrayImage& img, double sigma) {
    if (sigma <= 0.0) return img;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        sum += kernel[i + radius];
    }
    for (double& k : kernel) k /= sum;

    GrayImage tmp(img.height, img.width), out(img.height, img.width);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[i + radius] * img.at_clamped(r, c + i);
            tmp.at(r, c) = acc;
        }
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[i + radius] * tmp.at_clamped(r + i, c);
            out.at(r, c) = acc;
        }
    return out;
}

// gradient direction quantized to 4 sectors: 0 = E/W, 1 = NE/SW, 2 = N/S, 3 = NW/SE
inline int gradient_sector(double gx, double gy) {
    const double ax = std::abs(gx), ay = std::abs(gy);
    // tan(22.5 deg) = sqrt(2) - 1
    constexpr double t = 0.41421356237309503;
    if (ay <= t * ax) return 0;
    if (ax <= t * ay) return 2;
    return ((gx > 0) == (gy > 0)) ? 3 : 1;
}

}  // namespace detail

// Gaussian blur -> Sobel -> non-maximum suppression -> hysteresis. Thresholds
// are fractions of the max gradient magnitude. NMS keeps ties on both sides,
// which keeps the operator covariant with 90-degree rotations.
inline BinaryMask canny_edges(const GrayImage& img, double sigma, double low, double high) {
    if (!(low > 0.0) || !(low < high) || !(high <= 1.0))
        throw ParameterError("canny_edges: require 0 < low < high <= 1");

    const GrayImage smooth = detail::gaussian_blur(img, sigma);
    const int H = img.height, W = img.width;
    std::vector<double> mag(static_cast<size_t>(H) * W, 0.0);
    std::vector<int> sector(static_cast<size_t>(H) * W, 0);
    double max_mag = 0.0;

    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            const double gx = (smooth.at_clamped(r - 1, c + 1) + 2.0 * smooth.at_clamped(r, c + 1) +
                               smooth.at_clamped(r + 1, c + 1)) -
                              (smooth.at_clamped(r - 1, c - 1) + 2.0 * smooth.at_clamped(r, c - 1) +
                               smooth.at_clamped(r + 1, c - 1));
            const double gy = (smooth.at_clamped(r + 1, c - 1) + 2.0 * smooth.at_clamped(r + 1, c) +
                               smooth.at_clamped(r + 1, c + 1)) -
                              (smooth.at_clamped(r - 1, c - 1) + 2.0 * smooth.at_clamped(r - 1, c) +
                               smooth.at_clamped(r - 1, c + 1));
            const size_t i = static_cast<size_t>(r) * W + c;
            mag[i] = std::hypot(gx, gy);
            sector[i] = detail::gradient_sector(gx, gy);
            max_mag = std::max(max_mag, mag[i]);
        }
    }
    if (max_mag <= 0.0) return BinaryMask(H, W);

    static constexpr int kOff[4][2] = {{0, 1}, {-1, 1}, {-1, 0}, {-1, -1}};
    auto mag_at = [&](int r, int c) -> double {
        if (r < 0 || r >= H || c < 0 || c >= W) return 0.0;
        return mag[static_cast<size_t>(r) * W + c];
    };

    std::vector<double> nms(static_cast<size_t>(H) * W, 0.0);
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            const size_t i = static_cast<size_t>(r) * W + c;
            if (mag[i] <= 0.0) continue;
            const int* off = kOff[sector[i]];
            const double a = mag_at(r + off[0], c + off[1]);
            const double b = mag_at(r - off[0], c - off[1]);
            if (mag[i] >= a && mag[i] >= b) nms[i] = mag[i];
        }

    const double high_t = high * max_mag;
    const double low_t = low * max_mag;
    BinaryMask edges(H, W);
    std::deque<std::pair<int, int>> frontier;
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c)
            if (nms[static_cast<size_t>(r) * W + c] >= high_t) {
                edges.at(r, c) = 1;
                frontier.emplace_back(r, c);
            }
    // link weak edges 8-connected to a strong seed
    while (!frontier.empty()) {
        auto [r, c] = frontier.front();
        frontier.pop_front();
        for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
                const int rr = r + dr, cc = c + dc;
                if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
                if (edges.at(rr, cc)) continue;
                if (nms[static_cast<size_t>(rr) * W + cc] >= low_t) {
                    edges.at(rr, cc) = 1;
                    frontier.emplace_back(rr, cc);
                }
            }
    }
    return edges;
}

// ---------------------------------------------------------------------------
// Morphology
// ---------------------------------------------------------------------------

struct Kernel {
    int side = 3;  // odd, rectangular structuring element

    void validate() const {
        if (side < 1 || side % 2 == 0)
            throw ParameterError("Kernel: side must be odd and >= 1");
    }
};

enum class MorphKind { Dilate, Erode, Close };

namespace detail {

inline BinaryMask dilate(const BinaryMask& m, int radius) {
    BinaryMask out(m.height, m.width);
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c) {
            if (!m.at(r, c)) continue;
            const int r0 = std::max(0, r - radius), r1 = std::min(m.height - 1, r + radius);
            const int c0 = std::max(0, c - radius), c1 = std::min(m.width - 1, c + radius);
            for (int rr = r0; rr <= r1; ++rr)
                for (int cc = c0; cc <= c1; ++cc) out.at(rr, cc) = 1;
        }
    return out;
}

// Out-of-bounds cells count as foreground for erosion; that keeps closing
// extensive on the clipped grid, matching the infinite-plane identity.
inline BinaryMask erode(const BinaryMask& m, int radius) {
    BinaryMask out(m.height, m.width);
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c) {
            bool all = true;
            for (int dr = -radius; all && dr <= radius; ++dr)
                for (int dc = -radius; dc <= radius; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    if (!m.in_bounds(rr, cc)) continue;
                    if (!m.at(rr, cc)) {
                        all = false;
                        break;
                    }
                }
            out.at(r, c) = all ? 1 : 0;
        }
    return out;
}

}  // namespace detail

inline BinaryMask morph(const BinaryMask& mask, MorphKind kind, const Kernel& k) {
    k.validate();
    const int radius = k.side / 2;
    switch (kind) {
        case MorphKind::Dilate: return detail::dilate(mask, radius);
        case MorphKind::Erode: return detail::erode(mask, radius);
        case MorphKind::Close: return detail::erode(detail::dilate(mask, radius), radius);
    }
    throw ParameterError("morph: unknown kind");
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentationSpec {
    double max_rotation_deg = 3.0;
    double zoom_fraction = 0.05;
    double hflip_prob = 0.5;
    double contrast_fraction = 0.10;
    uint64_t seed = 0;

    void validate() const {
        if (max_rotation_deg < 0.0 || zoom_fraction < 0.0 || contrast_fraction < 0.0)
            throw ParameterError("AugmentationSpec: magnitudes must be nonnegative");
        if (hflip_prob < 0.0 || hflip_prob > 1.0)
            throw ParameterError("AugmentationSpec: hflip_prob must be in [0,1]");
    }
};

struct SampledTransform {
    double theta_deg = 0.0;
    double zoom = 1.0;
    bool hflip = false;
    double contrast = 1.0;
};

inline SampledTransform sample_transform(const AugmentationSpec& spec, Rng& rng) {
    spec.validate();
    SampledTransform t;
    if (spec.max_rotation_deg > 0.0)
        t.theta_deg = rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg);
    if (spec.zoom_fraction > 0.0)
        t.zoom = rng.uniform(1.0 - spec.zoom_fraction, 1.0 + spec.zoom_fraction);
    if (spec.hflip_prob > 0.0) t.hflip = rng.bernoulli(spec.hflip_prob);
    if (spec.contrast_fraction > 0.0)
        t.contrast = rng.uniform(1.0 - spec.contrast_fraction, 1.0 + spec.contrast_fraction);
    return t;
}

// The geometric part is shared by image and mask (bilinear vs
// nearest-neighbor), the contrast scale is image-only. Shapes are preserved;
// the inverse map reads the source with edge replication for the image and
// background fill for the mask.
inline std::pair<GrayImage, BinaryMask> apply_transform(const GrayImage& img,
                                                        const BinaryMask& mask,
                                                        const SampledTransform& t) {
    if (!mask.same_shape(img)) throw InputError("augment: image/mask shape mismatch");
    const double theta_deg = t.theta_deg;
    const double zoom = t.zoom;
    const bool hflip = t.hflip;
    const double contrast = t.contrast;

    const int H = img.height, W = img.width;
    const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
    const double theta = theta_deg * 3.14159265358979323846 / 180.0;
    const double ct = std::cos(theta), st = std::sin(theta);

    GrayImage out_img(H, W);
    BinaryMask out_mask(H, W);

    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            // inverse map: unflip, then unrotate/unzoom about the center
            double x = hflip ? (2.0 * cx - c) : static_cast<double>(c);
            double y = static_cast<double>(r);
            const double dx = (x - cx) / zoom;
            const double dy = (y - cy) / zoom;
            const double sx = ct * dx + st * dy + cx;
            const double sy = -st * dx + ct * dy + cy;

            // bilinear with edge replication
            const double fx = std::floor(sx), fy = std::floor(sy);
            const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
            const double wx = sx - fx, wy = sy - fy;
            const double v00 = img.at_clamped(y0, x0);
            const double v01 = img.at_clamped(y0, x0 + 1);
            const double v10 = img.at_clamped(y0 + 1, x0);
            const double v11 = img.at_clamped(y0 + 1, x0 + 1);
            double v = (wx == 0.0 && wy == 0.0)
                           ? v00
                           : (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) +
                                 wy * ((1.0 - wx) * v10 + wx * v11);
            out_img.at(r, c) = clamp01(v * contrast);

            // nearest neighbor, background outside
            const int nr = static_cast<int>(std::lround(sy));
            const int nc = static_cast<int>(std::lround(sx));
            out_mask.at(r, c) = mask.in_bounds(nr, nc) && mask.at(nr, nc) ? 1 : 0;
        }
    }
    return {std::move(out_img), std::move(out_mask)};
}

inline std::pair<GrayImage, BinaryMask> augment(const GrayImage& img, const BinaryMask& mask,
                                                const AugmentationSpec& spec, Rng& rng) {
    return apply_transform(img, mask, sample_transform(spec, rng));
}

}  // namespace lss
