#include <catch2/catch_amalgamated.hpp>

#include "tintin/edges.hpp"
#include "tintin/losses.hpp"

using namespace tintin;

TEST_CASE("constant image has an all-zero edge map") {
    RgbImage img(12, 12, 0.6);
    EdgeMap e = extract_edges(img, 1.0);
    for (double v : e.values) CHECK(v == 0.0);
}

TEST_CASE("vertical step concentrates response on the step") {
    RgbImage img(16, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 8; x < 16; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = 1.0;
    EdgeMap e = extract_edges(img, 0.0);  // no smoothing: compact support
    for (int y = 0; y < 16; ++y) {
        CHECK(e.at(y, 7) > 0.5);
        CHECK(e.at(y, 8) > 0.5);
        CHECK(e.at(y, 0) == 0.0);
        CHECK(e.at(y, 15) == 0.0);
    }
}

TEST_CASE("edge magnitude is isotropic under 90-degree rotation") {
    Rng rng(19);
    RgbImage img(14, 14);
    for (double& v : img.pixels) v = rng.uniform();
    RgbImage rot(14, 14);
    for (int y = 0; y < 14; ++y)
        for (int x = 0; x < 14; ++x)
            for (int c = 0; c < 3; ++c) rot.at(x, 13 - y, c) = img.at(y, x, c);
    EdgeMap e = extract_edges(img, 1.0);
    EdgeMap er = extract_edges(rot, 1.0);
    double worst = 0.0;
    for (int y = 0; y < 14; ++y)
        for (int x = 0; x < 14; ++x) worst = std::max(worst, std::abs(er.at(x, 13 - y) - e.at(y, x)));
    CHECK(worst < 1e-6);
}

TEST_CASE("hard threshold applies the keep-above rule") {
    EdgeMap e(1, 4);
    e.values = {0.1, 0.89, 0.9, 0.95};
    EdgeMap t = threshold_edges(e, 0.9);
    CHECK(t.values == std::vector<double>{0.0, 0.0, 0.9, 0.95});
    CHECK(t.threshold_applied);
    CHECK(t.threshold == 0.9);
}

TEST_CASE("hard threshold limits and idempotence") {
    EdgeMap e(1, 5);
    e.values = {0.0, 0.2, 0.5, 0.99, 1.0};
    CHECK(threshold_edges(e, 0.0).values == e.values);
    CHECK(threshold_edges(e, 1.0).values == std::vector<double>{0, 0, 0, 0, 1.0});
    EdgeMap once = threshold_edges(e, 0.4);
    CHECK(threshold_edges(once, 0.4).values == once.values);
    CHECK_THROWS_AS(threshold_edges(e, 1.5), std::domain_error);
}

TEST_CASE("soft threshold approximates the hard threshold") {
    EdgeMap e(1, 2);
    e.values = {0.95, 0.5};
    EdgeMap s = soft_threshold_edges(e, 0.9, 1e-6);
    CHECK(s.values[0] == Catch::Approx(0.95).margin(1e-6));
    CHECK(s.values[1] == Catch::Approx(0.0).margin(1e-12));

    // sup-norm bound away from the threshold at temp = 0.005
    for (double v = 0.0; v <= 1.0; v += 0.001) {
        if (std::abs(v - 0.9) <= 0.05) continue;
        double hard = v < 0.9 ? 0.0 : v;
        EdgeMap one(1, 1);
        one.values = {v};
        double soft = soft_threshold_edges(one, 0.9, 0.005).values[0];
        CHECK(std::abs(soft - hard) < 0.01);
    }
    CHECK_THROWS_AS(soft_threshold_edges(e, 0.9, 0.0), std::domain_error);
}

TEST_CASE("soft threshold output never exceeds its input") {
    Rng rng(23);
    for (int i = 0; i < 200; ++i) {
        double v = rng.uniform();
        EdgeMap one(1, 1);
        one.values = {v};
        CHECK(soft_threshold_edges(one, 0.9, 0.05).values[0] <= v + 1e-15);
    }
}

TEST_CASE("soft threshold derivative matches finite differences") {
    Rng rng(29);
    for (int i = 0; i < 50; ++i) {
        double v = rng.uniform();
        const double h = 1e-7;
        auto f = [](double x) { return x / (1.0 + std::exp(-(x - 0.9) / 0.05)); };
        double fd = (f(v + h) - f(v - h)) / (2 * h);
        CHECK(soft_threshold_deriv(v, 0.9, 0.05) == Catch::Approx(fd).margin(1e-5));
    }
}

TEST_CASE("conv1d adjoint satisfies the dot-product identity") {
    Rng rng(37);
    int h = 9, w = 7;
    std::vector<double> x(static_cast<size_t>(h) * w), y(x.size());
    for (double& v : x) v = rng.normal();
    for (double& v : y) v = rng.normal();
    for (bool horiz : {true, false}) {
        for (const auto& k : {detail::gaussian_kernel(1.0), detail::kSobelDeriv, detail::kSobelSmooth}) {
            std::vector<double> ax = detail::conv1d(x, h, w, k, horiz);
            std::vector<double> aty = detail::conv1d_adjoint(y, h, w, k, horiz);
            double lhs = 0.0, rhs = 0.0;
            for (size_t i = 0; i < x.size(); ++i) {
                lhs += ax[i] * y[i];
                rhs += x[i] * aty[i];
            }
            CHECK(lhs == Catch::Approx(rhs).epsilon(1e-12));
        }
    }
}

TEST_CASE("edge extraction backward matches finite differences away from the normalizer") {
    // one strong step fixes the percentile normalizer; probe weak interior
    // texture whose magnitudes stay below the clamp
    Rng rng(43);
    RgbImage img(16, 16);
    for (size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = 0.5 + 0.02 * rng.normal();
    for (int y = 0; y < 16; ++y)
        for (int c = 0; c < 3; ++c) img.at(y, 0, c) = 1.0;  // dominant edge at x=0

    EdgeForward fwd = extract_edges_forward(img, 1.0);
    EdgeMap ref(16, 16);
    for (double& v : ref.values) v = rng.uniform() < 0.1 ? 1.0 : 0.0;
    auto objective = [&](const RgbImage& im) {
        EdgeForward f = extract_edges_forward(im, 1.0);
        EdgeMap soft = soft_threshold_edges(f.edges, 0.5, 0.1);
        return loss_iou(soft, ref).value;
    };
    IouLossResult iou = loss_iou(soft_threshold_edges(fwd.edges, 0.5, 0.1), ref);
    std::vector<double> cot(iou.grad.size());
    for (size_t i = 0; i < cot.size(); ++i)
        cot[i] = iou.grad[i] * soft_threshold_deriv(fwd.edges.values[i], 0.5, 0.1);
    std::vector<double> grad = extract_edges_backward(fwd, cot);

    const double h = 1e-6;
    int checked = 0;
    while (checked < 20) {
        // x >= 8: outside the +-4 influence radius of the columns holding the
        // percentile element, so the frozen normalizer matches the FD path
        int y = 3 + rng.uniform_int(10), x = 8 + rng.uniform_int(5), c = rng.uniform_int(3);
        size_t idx = (static_cast<size_t>(y) * 16 + x) * 3 + c;
        RgbImage lo = img, hi = img;
        lo.pixels[idx] -= h;
        hi.pixels[idx] += h;
        double fd = (objective(hi) - objective(lo)) / (2 * h);
        double denom = std::max({std::abs(fd), std::abs(grad[idx]), 1e-7});
        REQUIRE(std::abs(grad[idx] - fd) / denom < 1e-3);
        ++checked;
    }
}
