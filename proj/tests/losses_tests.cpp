#include <catch2/catch_amalgamated.hpp>

#include "tintin/losses.hpp"

using namespace tintin;

namespace {

RgbImage random_image(Rng& rng, int h, int w) {
    RgbImage img(h, w);
    for (double& v : img.pixels) v = 0.05 + 0.9 * rng.uniform();
    return img;
}

// central finite differences of a scalar image functional
template <typename F>
void check_grad_fd(const RgbImage& img, const std::vector<double>& grad, F&& f, double tol,
                   int n_probe, Rng& rng) {
    const double h = 1e-5;
    for (int probe = 0; probe < n_probe; ++probe) {
        size_t i = static_cast<size_t>(rng.uniform_int(static_cast<int>(img.pixels.size())));
        RgbImage lo = img, hi = img;
        lo.pixels[i] -= h;
        hi.pixels[i] += h;
        double fd = (f(hi) - f(lo)) / (2 * h);
        double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
        REQUIRE(std::abs(grad[i] - fd) / denom < tol);
    }
}

}  // namespace

TEST_CASE("Euclidean LAB loss vanishes at the reference") {
    Rng rng(2);
    RgbImage img = random_image(rng, 6, 6);
    LossResult r = loss_euclidean(img, img);
    CHECK(r.value == 0.0);
    for (double g : r.grad) CHECK(g == 0.0);
}

TEST_CASE("Euclidean LAB loss on a hand-computed single-pixel pair") {
    // LAB (50,0,0) vs (50,3,4): Frobenius distance 5
    LabImage la(1, 1), lb(1, 1);
    la.pixels = {50.0, 0.0, 0.0};
    lb.pixels = {50.0, 3.0, 4.0};
    LabToRgbResult ra = lab_to_rgb(la), rb = lab_to_rgb(lb);
    REQUIRE_FALSE(ra.clamped);
    REQUIRE_FALSE(rb.clamped);
    LossResult r = loss_euclidean(ra.image, rb.image);
    CHECK(r.value == Catch::Approx(5.0).margin(1e-4));
}

TEST_CASE("Euclidean LAB gradient matches finite differences") {
    Rng rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        RgbImage gen = random_image(rng, 8, 8);
        RgbImage ref = random_image(rng, 8, 8);
        LossResult r = loss_euclidean(gen, ref);
        check_grad_fd(gen, r.grad,
                      [&](const RgbImage& x) { return loss_euclidean(x, ref).value; }, 1e-4, 12,
                      rng);
    }
}

TEST_CASE("color distribution of an on-palette pixel is sharply peaked") {
    Palette p = parse_palette("#000000,#ff0000");  // RGB distance 1
    RgbImage img(1, 1);  // black pixel == color 1
    ColorDistributionResult cd = color_distribution(img, p, 100.0);
    CHECK(cd.dist.probs[0] >= 1.0 - 1e-12);  // the competing mass is denormal-scale
    CHECK(cd.dist.probs[1] < 1e-43);
}

TEST_CASE("color distribution flattens to uniform as rho -> 0") {
    Palette p = parse_palette("#102030,#405060,#708090,#a0b0c0");
    Rng rng(4);
    RgbImage img = random_image(rng, 4, 4);
    ColorDistributionResult cd = color_distribution(img, p, 1e-12);
    for (double v : cd.dist.probs) CHECK(v == Catch::Approx(0.25).margin(1e-9));
}

TEST_CASE("sharp rho recovers the nearest-color histogram") {
    Palette p = parse_palette("#000000,#808080,#ff0000,#00ff00");  // min distance 0.5
    Rng rng(9);
    RgbImage img(8, 8);
    std::vector<double> hist(p.size(), 0.0);
    for (size_t i = 0; i < img.pixel_count(); ++i) {
        int j = rng.uniform_int(static_cast<int>(p.size()));
        hist[j] += 1.0 / img.pixel_count();
        for (int c = 0; c < 3; ++c) img.pixels[3 * i + c] = p.colors[j][c];
    }
    ColorDistributionResult cd = color_distribution(img, p, 1e4);
    double l1 = 0.0;
    for (size_t j = 0; j < p.size(); ++j) l1 += std::abs(cd.dist.probs[j] - hist[j]);
    CHECK(l1 < 1e-3);
}

TEST_CASE("color distribution is bitwise independent of chunking") {
    Palette p = parse_palette("#e6194b,#3cb44b,#ffe119");
    Rng rng(13);
    RgbImage img = random_image(rng, 16, 16);
    ColorDistributionResult mono = color_distribution(img, p, 100.0);
    for (size_t chunk : {1ul, 7ul, 64ul, 300ul}) {
        ColorDistributionResult c = color_distribution(img, p, 100.0, chunk);
        CHECK(c.dist.probs == mono.dist.probs);
        CHECK(c.softmax == mono.softmax);
    }
}

TEST_CASE("distribution loss attains the entropy bound at equality") {
    // two palette colors, pixels split exactly half/half, sharp softmax:
    // d-hat = (0.5, 0.5) = target, so the cross-entropy equals log 2
    Palette p = parse_palette("#000000,#ffffff");
    RgbImage img(1, 2);
    for (int c = 0; c < 3; ++c) img.at(0, 1, c) = 1.0;
    ColorLossConfig cfg;
    cfg.rho = 1e4;
    LossResult r = loss_ds(img, p, cfg);
    CHECK(r.value == Catch::Approx(std::log(2.0)).margin(1e-6));
}

TEST_CASE("distribution loss: Gibbs inequality against the target entropy") {
    Palette p = parse_palette("#e6194b,#3cb44b,#ffe119");
    double entropy = std::log(3.0);
    Rng rng(21);
    ColorLossConfig cfg;
    for (int trial = 0; trial < 10; ++trial) {
        RgbImage img = random_image(rng, 6, 6);
        LossResult r = loss_ds(img, p, cfg);
        CHECK(r.value >= entropy - 1e-9);
    }
}

TEST_CASE("distribution loss with a starved palette entry hits the log clamp") {
    Palette p = parse_palette("#000000,#ffffff");
    RgbImage img(1, 1);  // single black pixel: d-hat ~ (1, ~0)
    ColorLossConfig cfg;  // rho=100, eps=1e-8
    LossResult r = loss_ds(img, p, cfg);
    // 0.5*(-log 1) + 0.5*(-log 1e-8)
    CHECK(r.value == Catch::Approx(0.5 * (-std::log(1e-8))).margin(1e-3));
}

TEST_CASE("distribution loss gradient matches finite differences") {
    Rng rng(31);
    ColorLossConfig cfg;
    Palette p = parse_palette("#e6194b,#3cb44b,#4363d8");
    for (int trial = 0; trial < 5; ++trial) {
        RgbImage gen = random_image(rng, 8, 8);
        LossResult r = loss_ds(gen, p, cfg);
        check_grad_fd(gen, r.grad, [&](const RgbImage& x) { return loss_ds(x, p, cfg).value; },
                      1e-4, 12, rng);
    }
}

TEST_CASE("combined color loss is the weighted sum of its parts") {
    Palette p = parse_palette("#e6194b,#3cb44b");
    SpatialPalette sp = spatial_palette(p, 6, 6, 77);
    Rng rng(41);
    RgbImage gen = random_image(rng, 6, 6);
    ColorLossConfig cfg;

    ColorLossConfig only_eu = cfg;
    only_eu.lambda1 = 0.0;
    LossResult eu = loss_euclidean(gen, sp.image);
    LossResult combined = loss_color(gen, sp, only_eu);
    CHECK(combined.value == Catch::Approx(cfg.lambda2 * eu.value));

    LossResult full = loss_color(gen, sp, cfg);
    LossResult ds = loss_ds(gen, p, cfg);
    CHECK(full.value == Catch::Approx(cfg.lambda1 * ds.value + cfg.lambda2 * eu.value));
    for (size_t i = 0; i < full.grad.size(); ++i)
        CHECK(full.grad[i] ==
              Catch::Approx(cfg.lambda1 * ds.grad[i] + cfg.lambda2 * eu.grad[i]).margin(1e-12));
}

TEST_CASE("soft IoU loss on hand-checkable masks") {
    EdgeMap a(1, 2), b(1, 2);
    SECTION("identical binary masks") {
        a.values = {1.0, 0.0};
        IouLossResult r = loss_iou(a, a);
        CHECK(r.value == 0.0);
    }
    SECTION("disjoint binary masks") {
        a.values = {1.0, 0.0};
        b.values = {0.0, 1.0};
        IouLossResult r = loss_iou(a, b);
        CHECK(r.value == 1.0);
    }
    SECTION("one-pixel subset of a two-pixel mask") {
        a.values = {1.0, 1.0};
        b.values = {1.0, 0.0};
        IouLossResult r = loss_iou(a, b);
        CHECK(r.value == Catch::Approx(0.5));
    }
    SECTION("both empty reports the degenerate union") {
        IouLossResult r = loss_iou(a, b);
        CHECK(r.value == 1.0);
        CHECK(r.empty_union);
        for (double g : r.grad) CHECK(g == 0.0);
    }
}

TEST_CASE("soft IoU value stays in [0,1] and its gradient matches finite differences") {
    Rng rng(55);
    for (int trial = 0; trial < 5; ++trial) {
        EdgeMap a(8, 8), b(8, 8);
        for (double& v : a.values) v = rng.uniform();
        for (double& v : b.values) v = rng.uniform();
        IouLossResult r = loss_iou(a, b);
        CHECK(r.value >= 0.0);
        CHECK(r.value <= 1.0);
        const double h = 1e-6;
        for (int probe = 0; probe < 10; ++probe) {
            size_t i = static_cast<size_t>(rng.uniform_int(64));
            EdgeMap lo = a, hi = a;
            lo.values[i] -= h;
            hi.values[i] += h;
            double fd = (loss_iou(hi, b).value - loss_iou(lo, b).value) / (2 * h);
            double denom = std::max({std::abs(fd), std::abs(r.grad[i]), 1e-8});
            REQUIRE(std::abs(r.grad[i] - fd) / denom < 1e-4);
        }
    }
}

TEST_CASE("loss config validation") {
    ColorLossConfig cfg;
    cfg.rho = -1.0;
    CHECK_THROWS_AS(cfg.validate(), std::domain_error);
    cfg.rho = 100.0;
    cfg.epsilon = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::domain_error);
}
