#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tintin/image.hpp"

namespace tintin {

// Ordered list of P sRGB colors with a probability vector over them.
struct Palette {
    std::vector<std::array<double, 3>> colors;
    std::vector<double> weights;
    bool short_palette = false;  // extraction produced fewer colors than requested

    size_t size() const { return colors.size(); }

    void validate() const {
        if (colors.empty()) throw std::domain_error("Palette: empty");
        if (weights.size() != colors.size())
            throw std::domain_error("Palette: weight/color count mismatch");
        double sum = 0.0;
        for (double w : weights) {
            if (w < 0.0) throw std::domain_error("Palette: negative weight");
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw std::domain_error("Palette: weights do not sum to 1");
        for (const auto& c : colors)
            for (double v : c)
                if (v < 0.0 || v > 1.0) throw std::domain_error("Palette: color outside [0,1]");
    }

    std::string to_hex() const {
        std::ostringstream os;
        for (size_t i = 0; i < colors.size(); ++i) {
            if (i) os << ',';
            os << '#';
            for (double v : colors[i]) {
                int b = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
                static const char* hex = "0123456789abcdef";
                os << hex[b >> 4] << hex[b & 15];
            }
        }
        return os.str();
    }
};

// Image whose every pixel is one of the source palette's colors.
struct SpatialPalette {
    RgbImage image;
    Palette source;
    uint64_t seed = 0;
};

namespace detail {
inline int hex_digit(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}
}  // namespace detail

// Comma-separated "#RRGGBB" entries, 1 <= P <= 64. Uniform weights unless the
// caller supplies explicit ones afterwards.
inline Palette parse_palette(const std::string& hex_list) {
    Palette p;
    std::stringstream ss(hex_list);
    std::string tok;
    int pos = 0;
    while (std::getline(ss, tok, ',')) {
        ++pos;
        // trim whitespace
        size_t a = tok.find_first_not_of(" \t");
        size_t b = tok.find_last_not_of(" \t");
        if (a == std::string::npos)
            throw std::invalid_argument("parse_palette: empty token at position " +
                                        std::to_string(pos));
        tok = tok.substr(a, b - a + 1);
        if (tok.size() != 7 || tok[0] != '#')
            throw std::invalid_argument("parse_palette: malformed token \"" + tok +
                                        "\" at position " + std::to_string(pos) +
                                        " (expected #RRGGBB)");
        std::array<double, 3> col{};
        for (int c = 0; c < 3; ++c) {
            int hi = detail::hex_digit(tok[1 + 2 * c]);
            int lo = detail::hex_digit(tok[2 + 2 * c]);
            if (hi < 0 || lo < 0)
                throw std::invalid_argument("parse_palette: invalid hex digit in token \"" + tok +
                                            "\" at position " + std::to_string(pos));
            col[c] = (hi * 16 + lo) / 255.0;
        }
        p.colors.push_back(col);
    }
    if (p.colors.empty()) throw std::domain_error("parse_palette: empty palette list");
    if (p.colors.size() > 64) throw std::domain_error("parse_palette: more than 64 colors");
    p.weights.assign(p.colors.size(), 1.0 / p.colors.size());
    return p;
}

// Each pixel drawn independently from the categorical distribution given by
// the palette weights. Deterministic given seed.
inline SpatialPalette spatial_palette(const Palette& p, int height, int width, uint64_t seed) {
    p.validate();
    if (height < 1 || width < 1) throw std::domain_error("spatial_palette: size must be >= 1");
    std::vector<double> cdf(p.size());
    std::partial_sum(p.weights.begin(), p.weights.end(), cdf.begin());
    cdf.back() = 1.0;
    SpatialPalette sp;
    sp.image = RgbImage(height, width);
    sp.source = p;
    sp.seed = seed;
    Rng rng(seed);
    for (size_t i = 0; i < sp.image.pixel_count(); ++i) {
        double u = rng.uniform();
        size_t j = std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin();
        if (j >= p.size()) j = p.size() - 1;
        for (int c = 0; c < 3; ++c) sp.image.pixels[3 * i + c] = p.colors[j][c];
    }
    return sp;
}

namespace detail {

struct CutBox {
    std::vector<size_t> idx;  // pixel indices
};

inline void box_range(const RgbImage& img, const CutBox& box, double lo[3], double hi[3]) {
    for (int c = 0; c < 3; ++c) {
        lo[c] = 1e30;
        hi[c] = -1e30;
    }
    for (size_t i : box.idx)
        for (int c = 0; c < 3; ++c) {
            double v = img.pixels[3 * i + c];
            lo[c] = std::min(lo[c], v);
            hi[c] = std::max(hi[c], v);
        }
}

}  // namespace detail

// Classical median cut in RGB: repeatedly split the most populous splittable
// box along its longest axis. Returned colors are box means, weights are pixel
// fractions ordered descending. Splits threshold on value (not rank), so the
// result is invariant to pixel order.
inline Palette dominant_colors(const RgbImage& img, int k) {
    if (k < 1) throw std::domain_error("dominant_colors: k must be >= 1");
    std::vector<detail::CutBox> boxes(1);
    boxes[0].idx.resize(img.pixel_count());
    std::iota(boxes[0].idx.begin(), boxes[0].idx.end(), size_t{0});

    while (static_cast<int>(boxes.size()) < k) {
        // most populous box with nonzero extent on some axis
        int best = -1;
        size_t best_n = 0;
        int best_axis = 0;
        double best_lo = 0, best_hi = 0;
        for (size_t b = 0; b < boxes.size(); ++b) {
            double lo[3], hi[3];
            detail::box_range(img, boxes[b], lo, hi);
            int axis = -1;
            double span = 0.0;
            for (int c = 0; c < 3; ++c)
                if (hi[c] - lo[c] > span) {
                    span = hi[c] - lo[c];
                    axis = c;
                }
            if (axis < 0 || span <= 1e-12) continue;
            if (boxes[b].idx.size() > best_n) {
                best = static_cast<int>(b);
                best_n = boxes[b].idx.size();
                best_axis = axis;
                best_lo = lo[axis];
                best_hi = hi[axis];
            }
        }
        if (best < 0) break;  // nothing splittable: fewer distinct colors than k

        detail::CutBox& src = boxes[best];
        // median of the axis values; fall back to the midpoint when the median
        // coincides with the minimum (threshold split keeps both halves nonempty)
        std::vector<double> vals;
        vals.reserve(src.idx.size());
        for (size_t i : src.idx) vals.push_back(img.pixels[3 * i + best_axis]);
        std::nth_element(vals.begin(), vals.begin() + vals.size() / 2, vals.end());
        double thresh = vals[vals.size() / 2];
        if (thresh <= best_lo || thresh > best_hi) thresh = 0.5 * (best_lo + best_hi);
        {
            bool any_left = false;
            for (size_t i : src.idx)
                if (img.pixels[3 * i + best_axis] < thresh) { any_left = true; break; }
            if (!any_left) thresh = 0.5 * (best_lo + best_hi);
        }
        detail::CutBox left, right;
        for (size_t i : src.idx)
            (img.pixels[3 * i + best_axis] < thresh ? left : right).idx.push_back(i);
        if (left.idx.empty() || right.idx.empty()) break;
        boxes[best] = std::move(left);
        boxes.push_back(std::move(right));
    }

    Palette p;
    const double n = static_cast<double>(img.pixel_count());
    struct Entry {
        std::array<double, 3> color;
        double weight;
    };
    std::vector<Entry> entries;
    for (const auto& box : boxes) {
        std::array<double, 3> mean{};
        for (size_t i : box.idx)
            for (int c = 0; c < 3; ++c) mean[c] += img.pixels[3 * i + c];
        for (int c = 0; c < 3; ++c) mean[c] /= static_cast<double>(box.idx.size());
        entries.push_back({mean, static_cast<double>(box.idx.size()) / n});
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.weight != b.weight) return a.weight > b.weight;
        return a.color < b.color;
    });
    for (const auto& e : entries) {
        p.colors.push_back(e.color);
        p.weights.push_back(e.weight);
    }
    p.short_palette = static_cast<int>(p.colors.size()) < k;
    return p;
}

}  // namespace tintin
