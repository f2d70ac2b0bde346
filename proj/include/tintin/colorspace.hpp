#pragma once

#include <cmath>
#include <stdexcept>

#include "tintin/image.hpp"

// sRGB <-> CIELAB, D65 reference white, 2-degree observer. The transfer
// function is extended past [0,1] (linear branch below the breakpoint covers
// negatives, the power branch is used above 1) so the conversion is total on
// the reals; rgb_to_lab() on the image type still enforces the [0,1] contract.

namespace tintin {

namespace detail {

constexpr double kSrgbBreak = 0.04045;          // gamma-encoded breakpoint
constexpr double kLinearBreak = 0.0031308;      // linear-light breakpoint
constexpr double kLabDelta = 6.0 / 29.0;

// sRGB(D65) -> XYZ, IEC 61966-2-1
constexpr double kRgbToXyz[3][3] = {
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
};
constexpr double kXyzToRgb[3][3] = {
    {3.2404542, -1.5371385, -0.4985314},
    {-0.9692660, 1.8760108, 0.0415560},
    {0.0556434, -0.2040259, 1.0572252},
};
constexpr double kWhiteX = 0.95047, kWhiteY = 1.0, kWhiteZ = 1.08883;

inline double srgb_to_linear(double v) {
    return v <= kSrgbBreak ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

inline double srgb_to_linear_deriv(double v) {
    return v <= kSrgbBreak ? 1.0 / 12.92
                           : (2.4 / 1.055) * std::pow((v + 0.055) / 1.055, 1.4);
}

inline double linear_to_srgb(double v) {
    return v <= kLinearBreak ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

inline double lab_f(double t) {
    const double d3 = kLabDelta * kLabDelta * kLabDelta;
    return t > d3 ? std::cbrt(t) : t / (3.0 * kLabDelta * kLabDelta) + 4.0 / 29.0;
}

inline double lab_f_deriv(double t) {
    const double d3 = kLabDelta * kLabDelta * kLabDelta;
    if (t > d3) {
        double c = std::cbrt(t);
        return 1.0 / (3.0 * c * c);
    }
    return 1.0 / (3.0 * kLabDelta * kLabDelta);
}

inline double lab_f_inv(double u) {
    return u > kLabDelta ? u * u * u : 3.0 * kLabDelta * kLabDelta * (u - 4.0 / 29.0);
}

}  // namespace detail

// Pixel-level conversion, no range validation (losses evaluate it on
// out-of-range intermediates from the unclamped decode path).
inline LabColor lab_from_rgb(double r, double g, double b) {
    using namespace detail;
    double lr = srgb_to_linear(r), lg = srgb_to_linear(g), lb = srgb_to_linear(b);
    double x = kRgbToXyz[0][0] * lr + kRgbToXyz[0][1] * lg + kRgbToXyz[0][2] * lb;
    double y = kRgbToXyz[1][0] * lr + kRgbToXyz[1][1] * lg + kRgbToXyz[1][2] * lb;
    double z = kRgbToXyz[2][0] * lr + kRgbToXyz[2][1] * lg + kRgbToXyz[2][2] * lb;
    double fx = lab_f(x / kWhiteX), fy = lab_f(y / kWhiteY), fz = lab_f(z / kWhiteZ);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

// 3x3 Jacobian d(L,a,b)/d(r,g,b) at one pixel.
inline void lab_from_rgb_jacobian(double r, double g, double b, double jac[3][3]) {
    using namespace detail;
    double ch[3] = {r, g, b};
    double dlin[3], lin[3];
    for (int i = 0; i < 3; ++i) {
        lin[i] = srgb_to_linear(ch[i]);
        dlin[i] = srgb_to_linear_deriv(ch[i]);
    }
    double xyz[3], wn[3] = {kWhiteX, kWhiteY, kWhiteZ};
    for (int i = 0; i < 3; ++i)
        xyz[i] = kRgbToXyz[i][0] * lin[0] + kRgbToXyz[i][1] * lin[1] + kRgbToXyz[i][2] * lin[2];
    double df[3];
    for (int i = 0; i < 3; ++i) df[i] = lab_f_deriv(xyz[i] / wn[i]) / wn[i];
    // dfx/drgb_k = df[0] * M[0][k] * dlin[k], etc.
    for (int k = 0; k < 3; ++k) {
        double dfx = df[0] * kRgbToXyz[0][k] * dlin[k];
        double dfy = df[1] * kRgbToXyz[1][k] * dlin[k];
        double dfz = df[2] * kRgbToXyz[2][k] * dlin[k];
        jac[0][k] = 116.0 * dfy;
        jac[1][k] = 500.0 * (dfx - dfy);
        jac[2][k] = 200.0 * (dfy - dfz);
    }
}

inline void rgb_from_lab(double L, double a, double b, double* r, double* g, double* bl,
                         bool* clamped) {
    using namespace detail;
    double fy = (L + 16.0) / 116.0;
    double fx = fy + a / 500.0;
    double fz = fy - b / 200.0;
    double xyz[3] = {kWhiteX * lab_f_inv(fx), kWhiteY * lab_f_inv(fy), kWhiteZ * lab_f_inv(fz)};
    double out[3];
    for (int i = 0; i < 3; ++i) {
        double lin = kXyzToRgb[i][0] * xyz[0] + kXyzToRgb[i][1] * xyz[1] + kXyzToRgb[i][2] * xyz[2];
        double v = linear_to_srgb(lin);
        if (v < 0.0 || v > 1.0) {
            *clamped = true;
            v = v < 0.0 ? 0.0 : 1.0;
        }
        out[i] = v;
    }
    *r = out[0];
    *g = out[1];
    *bl = out[2];
}

// Validating image conversion: the operands of the LAB color losses.
inline LabImage rgb_to_lab(const RgbImage& img) {
    img.validate();
    LabImage out(img.height, img.width);
    for (size_t i = 0; i < img.pixel_count(); ++i) {
        LabColor c = lab_from_rgb(img.pixels[3 * i], img.pixels[3 * i + 1], img.pixels[3 * i + 2]);
        out.pixels[3 * i] = c.L;
        out.pixels[3 * i + 1] = c.a;
        out.pixels[3 * i + 2] = c.b;
    }
    return out;
}

struct LabToRgbResult {
    RgbImage image;
    bool clamped = false;  // set if any output channel was pulled into [0,1]
};

inline LabToRgbResult lab_to_rgb(const LabImage& img) {
    LabToRgbResult res;
    res.image = RgbImage(img.height, img.width);
    for (size_t i = 0; i < res.image.pixel_count(); ++i) {
        rgb_from_lab(img.pixels[3 * i], img.pixels[3 * i + 1], img.pixels[3 * i + 2],
                     &res.image.pixels[3 * i], &res.image.pixels[3 * i + 1],
                     &res.image.pixels[3 * i + 2], &res.clamped);
    }
    return res;
}

// CIE76 delta-E: Euclidean distance in LAB.
inline double delta_e(const LabColor& c1, const LabColor& c2) {
    double dL = c1.L - c2.L, da = c1.a - c2.a, db = c1.b - c2.b;
    return std::sqrt(dL * dL + da * da + db * db);
}

}  // namespace tintin
