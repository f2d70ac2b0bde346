#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "tintin/image.hpp"

// Smoothed Sobel gradient-magnitude edge operator with percentile
// normalization, plus the hard 0.9-style threshold and its differentiable
// sigmoid surrogate. The linear stages (luminance, blur, Sobel) are written as
// explicit gathers with reflect-101 borders so their adjoints are exact
// scatters over the same index map.

namespace tintin {

namespace detail {

inline int reflect101(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

inline std::vector<double> gaussian_kernel(double sigma) {
    if (sigma <= 0.0) return {1.0};
    int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[i + radius];
    }
    for (double& v : k) v /= sum;
    return k;
}

// separable 1-d convolution along x (horizontal=true) or y
inline std::vector<double> conv1d(const std::vector<double>& in, int h, int w,
                                  const std::vector<double>& kernel, bool horizontal) {
    int radius = static_cast<int>(kernel.size()) / 2;
    std::vector<double> out(in.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                int yy = horizontal ? y : reflect101(y + i, h);
                int xx = horizontal ? reflect101(x + i, w) : x;
                acc += kernel[i + radius] * in[static_cast<size_t>(yy) * w + xx];
            }
            out[static_cast<size_t>(y) * w + x] = acc;
        }
    return out;
}

// adjoint of conv1d: scatter cotangents back through the same gather map
inline std::vector<double> conv1d_adjoint(const std::vector<double>& cot, int h, int w,
                                          const std::vector<double>& kernel, bool horizontal) {
    int radius = static_cast<int>(kernel.size()) / 2;
    std::vector<double> out(cot.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double c = cot[static_cast<size_t>(y) * w + x];
            for (int i = -radius; i <= radius; ++i) {
                int yy = horizontal ? y : reflect101(y + i, h);
                int xx = horizontal ? reflect101(x + i, w) : x;
                out[static_cast<size_t>(yy) * w + xx] += kernel[i + radius] * c;
            }
        }
    return out;
}

const std::vector<double> kSobelDeriv = {-1.0, 0.0, 1.0};
const std::vector<double> kSobelSmooth = {1.0, 2.0, 1.0};

// Rec.709 luma weights applied to the gamma-encoded channels
constexpr double kLumaR = 0.2126, kLumaG = 0.7152, kLumaB = 0.0722;

}  // namespace detail

// Intermediate state of the edge operator, kept for the backward pass.
struct EdgeForward {
    int h = 0, w = 0;
    std::vector<double> gaussian;  // smoothing kernel actually used
    std::vector<double> gx, gy, mag;
    double norm = 1.0;   // 99.5th-percentile magnitude
    EdgeMap edges;       // normalized, clamped to [0,1]
};

inline EdgeForward extract_edges_forward(const RgbImage& img, double smooth_sigma) {
    if (smooth_sigma < 0.0) throw std::domain_error("extract_edges: smooth_sigma must be >= 0");
    using namespace detail;
    EdgeForward f;
    f.h = img.height;
    f.w = img.width;
    std::vector<double> lum(img.pixel_count());
    for (size_t i = 0; i < lum.size(); ++i)
        lum[i] = kLumaR * img.pixels[3 * i] + kLumaG * img.pixels[3 * i + 1] +
                 kLumaB * img.pixels[3 * i + 2];
    f.gaussian = gaussian_kernel(smooth_sigma);
    std::vector<double> sm = conv1d(conv1d(lum, f.h, f.w, f.gaussian, true), f.h, f.w, f.gaussian, false);
    f.gx = conv1d(conv1d(sm, f.h, f.w, kSobelDeriv, true), f.h, f.w, kSobelSmooth, false);
    f.gy = conv1d(conv1d(sm, f.h, f.w, kSobelSmooth, true), f.h, f.w, kSobelDeriv, false);
    f.mag.resize(lum.size());
    for (size_t i = 0; i < f.mag.size(); ++i)
        f.mag[i] = std::sqrt(f.gx[i] * f.gx[i] + f.gy[i] * f.gy[i]);
    // 99.5th percentile (nearest rank) as the normalizer; robust to single-pixel spikes
    std::vector<double> sorted = f.mag;
    std::sort(sorted.begin(), sorted.end());
    size_t rank = static_cast<size_t>(std::ceil(0.995 * sorted.size()));
    if (rank > 0) --rank;
    f.norm = sorted[rank];
    f.edges = EdgeMap(f.h, f.w);
    if (f.norm <= 0.0) {
        f.norm = 1.0;  // constant image: zero gradient field everywhere
        return f;
    }
    for (size_t i = 0; i < f.mag.size(); ++i)
        f.edges.values[i] = std::min(f.mag[i] / f.norm, 1.0);
    return f;
}

inline EdgeMap extract_edges(const RgbImage& img, double smooth_sigma) {
    return extract_edges_forward(img, smooth_sigma).edges;
}

// Cotangent w.r.t. the normalized edge values -> gradient w.r.t. the RGB
// pixels. The percentile normalizer is treated as a constant and clamped
// pixels pass zero gradient.
inline std::vector<double> extract_edges_backward(const EdgeForward& f,
                                                  const std::vector<double>& cot_edges) {
    using namespace detail;
    size_t n = f.mag.size();
    std::vector<double> cot_mag(n, 0.0);
    for (size_t i = 0; i < n; ++i)
        if (f.mag[i] / f.norm < 1.0) cot_mag[i] = cot_edges[i] / f.norm;
    std::vector<double> cot_gx(n, 0.0), cot_gy(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
        if (f.mag[i] > 0.0) {
            cot_gx[i] = cot_mag[i] * f.gx[i] / f.mag[i];
            cot_gy[i] = cot_mag[i] * f.gy[i] / f.mag[i];
        }
    }
    std::vector<double> cot_sm_x =
        conv1d_adjoint(conv1d_adjoint(cot_gx, f.h, f.w, kSobelSmooth, false), f.h, f.w, kSobelDeriv, true);
    std::vector<double> cot_sm_y =
        conv1d_adjoint(conv1d_adjoint(cot_gy, f.h, f.w, kSobelDeriv, false), f.h, f.w, kSobelSmooth, true);
    std::vector<double> cot_sm(n);
    for (size_t i = 0; i < n; ++i) cot_sm[i] = cot_sm_x[i] + cot_sm_y[i];
    std::vector<double> cot_lum =
        conv1d_adjoint(conv1d_adjoint(cot_sm, f.h, f.w, f.gaussian, false), f.h, f.w, f.gaussian, true);
    std::vector<double> grad(3 * n, 0.0);
    for (size_t i = 0; i < n; ++i) {
        grad[3 * i] = kLumaR * cot_lum[i];
        grad[3 * i + 1] = kLumaG * cot_lum[i];
        grad[3 * i + 2] = kLumaB * cot_lum[i];
    }
    return grad;
}

// Hard threshold: values below tau become 0, values >= tau are kept.
inline EdgeMap threshold_edges(const EdgeMap& e, double tau) {
    if (tau < 0.0 || tau > 1.0) throw std::domain_error("threshold_edges: tau must be in [0,1]");
    EdgeMap out = e;
    for (double& v : out.values)
        if (v < tau) v = 0.0;
    out.threshold_applied = true;
    out.threshold = tau;
    return out;
}

// Sigmoid gate surrogate: v * sigmoid((v - tau)/temp). Converges pointwise to
// the hard threshold as temp -> 0 away from v == tau.
inline EdgeMap soft_threshold_edges(const EdgeMap& e, double tau, double temp) {
    if (temp <= 0.0) throw std::domain_error("soft_threshold_edges: temp must be > 0");
    EdgeMap out = e;
    for (double& v : out.values) v = v / (1.0 + std::exp(-(v - tau) / temp));
    return out;
}

// d(soft_threshold)/dv at value v
inline double soft_threshold_deriv(double v, double tau, double temp) {
    double s = 1.0 / (1.0 + std::exp(-(v - tau) / temp));
    return s + v * s * (1.0 - s) / temp;
}

}  // namespace tintin
