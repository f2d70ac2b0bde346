#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "tintin/image.hpp"

// Noise schedules, the forward kernel, clean-sample prediction, and the
// unguided DDPM/DDIM reverse updates. States are flat double vectors; image
// shape lives with the caller.

namespace tintin {

using ModelState = std::vector<double>;

enum class ScheduleKind { Linear, Cosine };

struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;       // beta_t, index t-1
    std::vector<double> alpha_bars;  // abar_t, index t-1, strictly decreasing
    std::vector<int> train_t;        // underlying training timestep per step (respacing)

    double beta(int t) const { return betas[t - 1]; }
    // abar_0 == 1 by convention
    double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars[t - 1]; }
    int training_timestep(int t) const { return train_t.empty() ? t : train_t[t - 1]; }
};

inline NoiseSchedule make_schedule(int T, ScheduleKind kind = ScheduleKind::Linear) {
    if (T < 2) throw std::domain_error("make_schedule: T must be >= 2");
    NoiseSchedule s;
    s.T = T;
    s.betas.resize(T);
    s.alpha_bars.resize(T);
    if (kind == ScheduleKind::Linear) {
        // the usual [1e-4, 0.02] range defined at T=1000, scaled for T
        double scale = 1000.0 / T;
        double lo = 1e-4 * scale, hi = 0.02 * scale;
        for (int t = 0; t < T; ++t)
            s.betas[t] = lo + (hi - lo) * (T == 1 ? 0.0 : static_cast<double>(t) / (T - 1));
    } else {
        auto f = [&](double t) {
            double v = std::cos((t / T + 0.008) / 1.008 * M_PI / 2.0);
            return v * v;
        };
        double f0 = f(0.0);
        std::vector<double> ab(T);
        for (int t = 1; t <= T; ++t) ab[t - 1] = f(static_cast<double>(t)) / f0;
        for (int t = 0; t < T; ++t) {
            double prev = t == 0 ? 1.0 : ab[t - 1];
            s.betas[t] = std::clamp(1.0 - ab[t] / prev, 1e-8, 0.999);
        }
    }
    double acc = 1.0;
    for (int t = 0; t < T; ++t) {
        acc *= 1.0 - s.betas[t];
        s.alpha_bars[t] = acc;
    }
    return s;
}

// Strided subsequence of a training schedule: S effective steps whose
// alpha-bars are drawn from the full schedule; train_t maps each effective
// step back to its training timestep for the denoiser.
inline NoiseSchedule respace_schedule(const NoiseSchedule& full, int S) {
    if (S < 2 || S > full.T) throw std::domain_error("respace_schedule: bad step count");
    NoiseSchedule s;
    s.T = S;
    s.betas.resize(S);
    s.alpha_bars.resize(S);
    s.train_t.resize(S);
    for (int i = 0; i < S; ++i) {
        int idx = static_cast<int>(std::llround(static_cast<double>(i + 1) * full.T / S));
        idx = std::clamp(idx, 1, full.T);
        s.train_t[i] = idx;
        s.alpha_bars[i] = full.alpha_bar(idx);
        s.betas[i] = 1.0 - s.alpha_bars[i] / (i == 0 ? 1.0 : s.alpha_bars[i - 1]);
    }
    return s;
}

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise
inline ModelState forward_noise(const ModelState& x0, int t, const ModelState& noise,
                                const NoiseSchedule& sched) {
    if (x0.size() != noise.size()) throw std::domain_error("forward_noise: shape mismatch");
    double ab = sched.alpha_bar(t);
    double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    ModelState xt(x0.size());
    for (size_t i = 0; i < x0.size(); ++i) xt[i] = a * x0[i] + b * noise[i];
    return xt;
}

// x_{0|t} = (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t); unclamped (the
// gradient path must see out-of-range values; clamp only for display)
inline ModelState predict_x0(const ModelState& xt, const ModelState& eps_hat, int t,
                             const NoiseSchedule& sched) {
    if (xt.size() != eps_hat.size()) throw std::domain_error("predict_x0: shape mismatch");
    double ab = sched.alpha_bar(t);
    double inv = 1.0 / std::sqrt(ab), b = std::sqrt(1.0 - ab);
    ModelState x0(xt.size());
    for (size_t i = 0; i < xt.size(); ++i) x0[i] = (xt[i] - b * eps_hat[i]) * inv;
    return x0;
}

inline ModelState clamp_state(const ModelState& x, double lo = -1.0, double hi = 1.0) {
    ModelState out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = std::clamp(x[i], lo, hi);
    return out;
}

// Posterior-mean DDPM update r_t; noise is supplied by the caller and ignored
// at t == 1 (deterministic final step).
inline ModelState ddpm_step(const ModelState& xt, const ModelState& eps_hat, int t,
                            const NoiseSchedule& sched, const ModelState& noise) {
    double bt = sched.beta(t);
    double ab = sched.alpha_bar(t), ab_prev = sched.alpha_bar(t - 1);
    double mean_scale = 1.0 / std::sqrt(1.0 - bt);
    double eps_scale = bt / std::sqrt(1.0 - ab);
    double sigma = t > 1 ? std::sqrt(bt * (1.0 - ab_prev) / (1.0 - ab)) : 0.0;
    ModelState out(xt.size());
    for (size_t i = 0; i < xt.size(); ++i) {
        double mu = mean_scale * (xt[i] - eps_scale * eps_hat[i]);
        out[i] = sigma > 0.0 ? mu + sigma * noise[i] : mu;
    }
    return out;
}

// DDIM update t -> t_prev through x_{0|t}; eta = 0 is deterministic.
inline ModelState ddim_step(const ModelState& xt, const ModelState& eps_hat, int t, int t_prev,
                            const NoiseSchedule& sched, double eta, const ModelState& noise) {
    if (t_prev >= t) throw std::domain_error("ddim_step: t_prev must be < t");
    double ab = sched.alpha_bar(t), abp = sched.alpha_bar(t_prev);
    double sigma = 0.0;
    if (eta > 0.0 && t_prev > 0)
        sigma = eta * std::sqrt((1.0 - abp) / (1.0 - ab)) * std::sqrt(1.0 - ab / abp);
    double dir = std::sqrt(std::max(1.0 - abp - sigma * sigma, 0.0));
    double sab = std::sqrt(ab), sabp = std::sqrt(abp), s1ab = std::sqrt(1.0 - ab);
    ModelState out(xt.size());
    for (size_t i = 0; i < xt.size(); ++i) {
        double x0 = (xt[i] - s1ab * eps_hat[i]) / sab;
        out[i] = sabp * x0 + dir * eps_hat[i];
        if (sigma > 0.0) out[i] += sigma * noise[i];
    }
    return out;
}

inline void check_finite(const ModelState& x, const std::string& what) {
    for (double v : x)
        if (!std::isfinite(v)) throw std::runtime_error("non-finite value in " + what);
}

// model range [-1,1] -> sRGB [0,1]; the fixed affine decode. Unclamped by
// default so guidance gradients survive out-of-range pixels.
inline RgbImage decode_to_rgb(const ModelState& x, int h, int w, bool clamp) {
    RgbImage img(h, w);
    for (size_t i = 0; i < img.pixels.size(); ++i) {
        double v = (x[i] + 1.0) * 0.5;
        img.pixels[i] = clamp ? std::clamp(v, 0.0, 1.0) : v;
    }
    return img;
}

inline ModelState encode_from_rgb(const RgbImage& img) {
    ModelState x(img.pixels.size());
    for (size_t i = 0; i < x.size(); ++i) x[i] = img.pixels[i] * 2.0 - 1.0;
    return x;
}

}  // namespace tintin
