#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tintin {

// Dense H x W x 3 pixel grid, sRGB, channels interleaved, each value in [0,1]
// for valid images. Values are not clamped on construction; validate() checks.
struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;  // size height*width*3, row-major, RGB interleaved

    RgbImage() = default;
    RgbImage(int h, int w, double fill = 0.0)
        : height(h), width(w), pixels(static_cast<size_t>(h) * w * 3, fill) {
        if (h < 1 || w < 1) throw std::domain_error("RgbImage: dimensions must be positive");
    }

    double& at(int y, int x, int c) { return pixels[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    double at(int y, int x, int c) const { return pixels[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    size_t pixel_count() const { return static_cast<size_t>(height) * width; }

    void validate() const {
        static const char* names[3] = {"R", "G", "B"};
        for (size_t i = 0; i < pixels.size(); ++i) {
            double v = pixels[i];
            if (!(v >= 0.0 && v <= 1.0))
                throw std::domain_error("RgbImage: channel " + std::string(names[i % 3]) +
                                        " value " + std::to_string(v) + " outside [0,1]");
        }
    }
};

// H x W x 3 CIELAB grid. L in [0,100] for any in-gamut conversion, a/b unbounded.
struct LabImage {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;  // L,a,b interleaved

    LabImage() = default;
    LabImage(int h, int w) : height(h), width(w), pixels(static_cast<size_t>(h) * w * 3, 0.0) {}

    double& at(int y, int x, int c) { return pixels[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    double at(int y, int x, int c) const { return pixels[(static_cast<size_t>(y) * width + x) * 3 + c]; }
};

struct LabColor {
    double L = 0, a = 0, b = 0;
};

// H x W edge-strength map in [0,1].
struct EdgeMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;
    bool threshold_applied = false;
    double threshold = 0.0;

    EdgeMap() = default;
    EdgeMap(int h, int w, double fill = 0.0)
        : height(h), width(w), values(static_cast<size_t>(h) * w, fill) {}

    double& at(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
    double at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
};

// Deterministic random stream. All sampling in the library goes through this
// type with an explicit seed; there are no hidden entropy sources.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    // uniform on [0,1) with 53-bit resolution
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // standard normal via Box-Muller, two uniforms per draw (no caching, so the
    // draw count per call is fixed)
    double normal() {
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // uniform integer in [0, n)
    int uniform_int(int n) { return static_cast<int>(uniform() * n) % n; }

    uint64_t raw() { return gen_(); }

  private:
    std::mt19937_64 gen_;
};

inline void fill_normal(Rng& rng, std::vector<double>& v) {
    for (double& x : v) x = rng.normal();
}

// Pairwise (recursive) summation; reduction error stays O(log n) ulps so
// chunked and monolithic accumulations agree to ~1e-12.
inline double pairwise_sum(const double* data, size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (size_t i = 0; i < n; ++i) s += data[i];
        return s;
    }
    size_t h = n / 2;
    return pairwise_sum(data, h) + pairwise_sum(data + h, n - h);
}

inline double pairwise_sum(const std::vector<double>& v) { return pairwise_sum(v.data(), v.size()); }

}  // namespace tintin
