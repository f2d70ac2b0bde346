#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "tintin/colorspace.hpp"
#include "tintin/edges.hpp"
#include "tintin/image.hpp"
#include "tintin/palette.hpp"

// The differentiable conditioning losses: LAB Euclidean distance between a
// sample and the spatial palette, cross-entropy between the softmax-assigned
// color distribution and the target palette distribution, their weighted sum,
// and the soft-IoU edge loss. Closed-form gradients throughout; the
// finite-difference suite is the oracle for all of them.

namespace tintin {

struct ColorLossConfig {
    double rho = 100.0;     // softmax sharpness over the palette dimension
    double lambda1 = 1.0;   // weight of the distribution-similarity term
    double lambda2 = 0.1;   // weight of the LAB Euclidean term
    double epsilon = 1e-8;  // log clamp; with rho=100 a palette entry can get zero mass

    void validate() const {
        if (rho <= 0.0) throw std::domain_error("ColorLossConfig: rho must be > 0");
        if (epsilon <= 0.0 || epsilon > 1e-4)
            throw std::domain_error("ColorLossConfig: epsilon must be in (0, 1e-4]");
    }
};

struct ColorDistribution {
    std::vector<double> probs;
};

struct LossResult {
    double value = 0.0;
    std::vector<double> grad;  // w.r.t. the generated image's pixels
};

// || LAB(gen) - LAB(ref) ||_2 over all pixels and channels, gradient through
// the sRGB->LAB chain. Inputs may be out of [0,1]; the extended transfer
// function keeps the conversion total (guidance evaluates this on unclamped
// decodes).
inline LossResult loss_euclidean(const RgbImage& gen, const RgbImage& ref) {
    if (gen.height != ref.height || gen.width != ref.width)
        throw std::domain_error("loss_euclidean: dimension mismatch");
    size_t n = gen.pixel_count();
    std::vector<double> diff(3 * n);
    std::vector<double> sq(n);
    for (size_t i = 0; i < n; ++i) {
        LabColor a = lab_from_rgb(gen.pixels[3 * i], gen.pixels[3 * i + 1], gen.pixels[3 * i + 2]);
        LabColor b = lab_from_rgb(ref.pixels[3 * i], ref.pixels[3 * i + 1], ref.pixels[3 * i + 2]);
        diff[3 * i] = a.L - b.L;
        diff[3 * i + 1] = a.a - b.a;
        diff[3 * i + 2] = a.b - b.b;
        sq[i] = diff[3 * i] * diff[3 * i] + diff[3 * i + 1] * diff[3 * i + 1] +
                diff[3 * i + 2] * diff[3 * i + 2];
    }
    LossResult res;
    res.value = std::sqrt(pairwise_sum(sq));
    res.grad.assign(3 * n, 0.0);
    if (res.value == 0.0) return res;
    for (size_t i = 0; i < n; ++i) {
        double jac[3][3];
        lab_from_rgb_jacobian(gen.pixels[3 * i], gen.pixels[3 * i + 1], gen.pixels[3 * i + 2], jac);
        for (int k = 0; k < 3; ++k) {
            double g = 0.0;
            for (int c = 0; c < 3; ++c) g += jac[c][k] * diff[3 * i + c];
            res.grad[3 * i + k] = g / res.value;
        }
    }
    return res;
}

struct ColorDistributionResult {
    ColorDistribution dist;              // d-hat: column means of the softmax matrix
    std::vector<double> softmax;         // N x P row-stochastic assignment matrix
    std::vector<double> distances;       // N x P RGB distance matrix D
};

// Pixel-to-palette RGB distance matrix D, row-wise softmax of -rho*D, column
// means. chunk_size only affects loop structure; accumulation order over
// pixels is fixed, so the result is bitwise independent of chunking.
inline ColorDistributionResult color_distribution(const RgbImage& gen, const Palette& p,
                                                  double rho, size_t chunk_size = 0) {
    if (p.size() < 1) throw std::domain_error("color_distribution: empty palette");
    const size_t n = gen.pixel_count();
    const size_t np = p.size();
    if (chunk_size == 0) chunk_size = n;
    ColorDistributionResult res;
    res.softmax.resize(n * np);
    res.distances.resize(n * np);
    res.dist.probs.assign(np, 0.0);
    for (size_t start = 0; start < n; start += chunk_size) {
        size_t end = std::min(start + chunk_size, n);
        for (size_t i = start; i < end; ++i) {
            double maxlog = -1e300;
            for (size_t j = 0; j < np; ++j) {
                double dr = gen.pixels[3 * i] - p.colors[j][0];
                double dg = gen.pixels[3 * i + 1] - p.colors[j][1];
                double db = gen.pixels[3 * i + 2] - p.colors[j][2];
                double d = std::sqrt(dr * dr + dg * dg + db * db);
                res.distances[i * np + j] = d;
                maxlog = std::max(maxlog, -rho * d);
            }
            double z = 0.0;
            for (size_t j = 0; j < np; ++j) {
                double e = std::exp(-rho * res.distances[i * np + j] - maxlog);
                res.softmax[i * np + j] = e;
                z += e;
            }
            for (size_t j = 0; j < np; ++j) {
                res.softmax[i * np + j] /= z;
                res.dist.probs[j] += res.softmax[i * np + j];
            }
        }
    }
    for (size_t j = 0; j < np; ++j) res.dist.probs[j] /= static_cast<double>(n);
    return res;
}

// Cross-entropy -sum_j m_j log(max(d-hat_j, eps)) against the palette's target
// distribution, full chain rule through the softmax and the distance matrix.
inline LossResult loss_ds(const RgbImage& gen, const Palette& p, const ColorLossConfig& cfg) {
    cfg.validate();
    const size_t n = gen.pixel_count();
    const size_t np = p.size();
    ColorDistributionResult cd = color_distribution(gen, p, cfg.rho);

    LossResult res;
    std::vector<double> c(np, 0.0);  // dL/d d-hat_j
    for (size_t j = 0; j < np; ++j) {
        double dj = cd.dist.probs[j];
        res.value += -p.weights[j] * std::log(std::max(dj, cfg.epsilon));
        if (dj > cfg.epsilon) c[j] = -p.weights[j] / dj;
    }
    res.grad.assign(3 * n, 0.0);
    const double rho_over_n = cfg.rho / static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {
        const double* s = &cd.softmax[i * np];
        const double* d = &cd.distances[i * np];
        double u = 0.0;
        for (size_t j = 0; j < np; ++j) u += c[j] * s[j];
        for (size_t k = 0; k < np; ++k) {
            if (d[k] <= 0.0) continue;  // distance kink: subgradient 0
            double dl_dd = -rho_over_n * s[k] * (c[k] - u);
            double scale = dl_dd / d[k];
            res.grad[3 * i] += scale * (gen.pixels[3 * i] - p.colors[k][0]);
            res.grad[3 * i + 1] += scale * (gen.pixels[3 * i + 1] - p.colors[k][1]);
            res.grad[3 * i + 2] += scale * (gen.pixels[3 * i + 2] - p.colors[k][2]);
        }
    }
    return res;
}

// lambda1 * L_DS(gen, palette) + lambda2 * L_Euclidean(gen, spatial palette image)
inline LossResult loss_color(const RgbImage& gen, const SpatialPalette& sp,
                             const ColorLossConfig& cfg) {
    LossResult ds = loss_ds(gen, sp.source, cfg);
    LossResult eu = loss_euclidean(gen, sp.image);
    LossResult res;
    res.value = cfg.lambda1 * ds.value + cfg.lambda2 * eu.value;
    res.grad.resize(ds.grad.size());
    for (size_t i = 0; i < res.grad.size(); ++i)
        res.grad[i] = cfg.lambda1 * ds.grad[i] + cfg.lambda2 * eu.grad[i];
    return res;
}

struct IouLossResult {
    double value = 0.0;
    std::vector<double> grad;  // w.r.t. gen_edges values
    bool empty_union = false;
};

// 1 - softIoU, the minimization form of the edge-alignment objective; hard
// IoU is evaluation-only. Both maps identically zero -> value 1, zero grad.
inline IouLossResult loss_iou(const EdgeMap& gen_edges, const EdgeMap& ref_edges) {
    if (gen_edges.height != ref_edges.height || gen_edges.width != ref_edges.width)
        throw std::domain_error("loss_iou: dimension mismatch");
    size_t n = gen_edges.values.size();
    std::vector<double> prod(n), uni(n);
    for (size_t i = 0; i < n; ++i) {
        double a = gen_edges.values[i], b = ref_edges.values[i];
        prod[i] = a * b;
        uni[i] = a + b - a * b;
    }
    double inter = pairwise_sum(prod);
    double uni_sum = pairwise_sum(uni);
    IouLossResult res;
    res.grad.assign(n, 0.0);
    if (uni_sum <= 0.0) {
        res.value = 1.0;
        res.empty_union = true;
        return res;
    }
    double iou = inter / uni_sum;
    res.value = 1.0 - iou;
    for (size_t i = 0; i < n; ++i) {
        double b = ref_edges.values[i];
        // d(1 - I/U)/da_i = -(b*U - I*(1-b)) / U^2
        res.grad[i] = -(b * uni_sum - inter * (1.0 - b)) / (uni_sum * uni_sum);
    }
    return res;
}

}  // namespace tintin
