#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tintin/colorspace.hpp"
#include "tintin/edges.hpp"
#include "tintin/image.hpp"
#include "tintin/palette.hpp"

// Desk-scale metrics: Color Distribution Score (Jaccard over matched dominant
// colors), hard IoU, single-scale SSIM, MSE, and batch reporting.

namespace tintin {

// Extract the top-k dominant colors of gen and greedily pair them with the
// target palette (nearest pair first, each color used once, match when
// deltaE < match_tau). Jaccard over the matched set.
inline double cds(const RgbImage& gen, const Palette& target, int k = 5, double match_tau = 20.0) {
    if (match_tau <= 0.0) throw std::domain_error("cds: match_tau must be > 0");
    Palette extracted = dominant_colors(gen, k);
    auto to_lab = [](const std::array<double, 3>& c) {
        return lab_from_rgb(c[0], c[1], c[2]);
    };
    std::vector<LabColor> el, tl;
    for (const auto& c : extracted.colors) el.push_back(to_lab(c));
    for (const auto& c : target.colors) tl.push_back(to_lab(c));
    std::vector<bool> eu(el.size(), false), tu(tl.size(), false);
    int matched = 0;
    while (true) {
        double best = match_tau;
        int bi = -1, bj = -1;
        for (size_t i = 0; i < el.size(); ++i) {
            if (eu[i]) continue;
            for (size_t j = 0; j < tl.size(); ++j) {
                if (tu[j]) continue;
                double d = delta_e(el[i], tl[j]);
                if (d < best) {
                    best = d;
                    bi = static_cast<int>(i);
                    bj = static_cast<int>(j);
                }
            }
        }
        if (bi < 0) break;
        eu[bi] = tu[bj] = true;
        ++matched;
    }
    double uni = static_cast<double>(el.size() + tl.size() - matched);
    return uni > 0.0 ? matched / uni : 1.0;
}

// Binarize both maps at tau; pixel-count intersection over union. Both empty
// maps give 1.0 by convention (flag reported through the pointer).
inline double hard_iou(const EdgeMap& a, const EdgeMap& b, double tau, bool* both_empty = nullptr) {
    if (a.height != b.height || a.width != b.width)
        throw std::domain_error("hard_iou: shape mismatch");
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        bool av = a.values[i] >= tau, bv = b.values[i] >= tau;
        inter += av && bv;
        uni += av || bv;
    }
    if (both_empty) *both_empty = uni == 0;
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace detail {

// 11x11 Gaussian window, sigma 1.5, normalized
inline const std::vector<double>& ssim_window() {
    static std::vector<double> w = [] {
        std::vector<double> k(11);
        double sum = 0.0;
        for (int i = 0; i < 11; ++i) {
            double d = i - 5.0;
            k[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
            sum += k[i];
        }
        for (double& v : k) v /= sum;
        return k;
    }();
    return w;
}

// single-channel SSIM, valid windows only (the canonical formulation)
inline double ssim_channel(const std::vector<double>& a, const std::vector<double>& b, int h,
                           int w) {
    const auto& win = ssim_window();
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;  // dynamic range 1.0
    double total = 0.0;
    size_t count = 0;
    for (int y = 0; y + 11 <= h; ++y)
        for (int x = 0; x + 11 <= w; ++x) {
            double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
            for (int i = 0; i < 11; ++i)
                for (int j = 0; j < 11; ++j) {
                    double wt = win[i] * win[j];
                    double va = a[static_cast<size_t>(y + i) * w + (x + j)];
                    double vb = b[static_cast<size_t>(y + i) * w + (x + j)];
                    mu_a += wt * va;
                    mu_b += wt * vb;
                    aa += wt * va * va;
                    bb += wt * vb * vb;
                    ab += wt * va * vb;
                }
            double var_a = aa - mu_a * mu_a, var_b = bb - mu_b * mu_b;
            double cov = ab - mu_a * mu_b;
            double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
            ++count;
        }
    if (count == 0) throw std::domain_error("ssim: image smaller than the 11x11 window");
    return total / static_cast<double>(count);
}

}  // namespace detail

// channel-averaged single-scale SSIM
inline double ssim(const RgbImage& a, const RgbImage& b) {
    if (a.height != b.height || a.width != b.width) throw std::domain_error("ssim: shape mismatch");
    double total = 0.0;
    size_t n = a.pixel_count();
    for (int c = 0; c < 3; ++c) {
        std::vector<double> ca(n), cb(n);
        for (size_t i = 0; i < n; ++i) {
            ca[i] = a.pixels[3 * i + c];
            cb[i] = b.pixels[3 * i + c];
        }
        total += detail::ssim_channel(ca, cb, a.height, a.width);
    }
    return total / 3.0;
}

inline double ssim(const EdgeMap& a, const EdgeMap& b) {
    if (a.height != b.height || a.width != b.width) throw std::domain_error("ssim: shape mismatch");
    return detail::ssim_channel(a.values, b.values, a.height, a.width);
}

inline double mse(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::domain_error("mse: shape mismatch");
    std::vector<double> sq(a.size());
    for (size_t i = 0; i < a.size(); ++i) sq[i] = (a[i] - b[i]) * (a[i] - b[i]);
    return pairwise_sum(sq) / static_cast<double>(a.size());
}

inline double mse(const RgbImage& a, const RgbImage& b) {
    if (a.height != b.height || a.width != b.width) throw std::domain_error("mse: shape mismatch");
    return mse(a.pixels, b.pixels);
}

inline double mse(const EdgeMap& a, const EdgeMap& b) {
    if (a.height != b.height || a.width != b.width) throw std::domain_error("mse: shape mismatch");
    return mse(a.values, b.values);
}

// Per-image records with exactly recomputable aggregates.
struct MetricsReport {
    struct Record {
        uint64_t seed = 0;
        std::string metric;
        double value = 0.0;
    };
    std::vector<Record> records;
    std::string config_fingerprint;

    void add(uint64_t seed, const std::string& metric, double value) {
        records.push_back({seed, metric, value});
    }

    struct Aggregate {
        double mean = 0.0;
        double stddev = 0.0;
        size_t count = 0;
    };

    std::map<std::string, Aggregate> aggregates() const {
        std::map<std::string, std::vector<double>> by_metric;
        for (const auto& r : records) by_metric[r.metric].push_back(r.value);
        std::map<std::string, Aggregate> out;
        for (const auto& [name, vals] : by_metric) {
            Aggregate a;
            a.count = vals.size();
            a.mean = pairwise_sum(vals) / vals.size();
            if (vals.size() > 1) {
                std::vector<double> sq(vals.size());
                for (size_t i = 0; i < vals.size(); ++i)
                    sq[i] = (vals[i] - a.mean) * (vals[i] - a.mean);
                a.stddev = std::sqrt(pairwise_sum(sq) / (vals.size() - 1));
            }
            out[name] = a;
        }
        return out;
    }

    std::string to_jsonl() const {
        std::ostringstream os;
        os << std::setprecision(17);
        for (const auto& r : records)
            os << "{\"seed\":" << r.seed << ",\"metric\":\"" << r.metric
               << "\",\"value\":" << r.value << "}\n";
        for (const auto& [name, a] : aggregates())
            os << "{\"metric\":\"" << name << "\",\"mean\":" << a.mean << ",\"stddev\":" << a.stddev
               << ",\"count\":" << a.count << "}\n";
        return os.str();
    }

    std::string summary_table() const {
        std::ostringstream os;
        os << std::left << std::setw(16) << "metric" << std::setw(14) << "mean" << std::setw(14)
           << "stddev" << "n\n";
        for (const auto& [name, a] : aggregates())
            os << std::left << std::setw(16) << name << std::setw(14) << a.mean << std::setw(14)
               << a.stddev << a.count << '\n';
        return os.str();
    }
};

}  // namespace tintin
