#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tintin/denoiser.hpp"
#include "tintin/diffusion.hpp"
#include "tintin/edges.hpp"
#include "tintin/losses.hpp"

// Energy-guided reverse sampling: x_{t-1} = r_t - alpha_t * grad of the
// condition energy at the predicted clean sample, applied inside the
// Conditioning Zone with time-travel resampling between repetitions.

namespace tintin {

enum class StepPolicy { Normalized, Constant };
enum class GradMode { ThroughDenoiser, Skip };
enum class SamplerKind { Ddpm, Ddim };

// condition energy evaluated at x_{0|t} in model space; returns value and
// gradient w.r.t. x_{0|t}
using ConditionFn = std::function<LossResult(const ModelState& x0t)>;

struct GuidanceConfig {
    int cz_low = 1;        // guidance active for cz_low <= t <= cz_high
    int cz_high = 0;       // (sampling-step units, t counted down from T)
    int repetitions = 1;   // guided updates per timestep inside the zone
    int travel_depth = 1;  // forward-kernel steps re-noised between repetitions
    StepPolicy policy = StepPolicy::Normalized;
    double step_scale = 1.0;
    GradMode grad_mode = GradMode::Skip;
    SamplerKind sampler = SamplerKind::Ddim;
    double eta = 0.0;

    void validate(int T, bool has_condition) const {
        if (repetitions < 1) throw std::invalid_argument("guidance: repetitions must be >= 1");
        if (travel_depth < 1) throw std::invalid_argument("guidance: travel_depth must be >= 1");
        if (step_scale < 0.0) throw std::invalid_argument("guidance: step_scale must be >= 0");
        if (has_condition) {
            if (cz_low < 1 || cz_high > T || cz_low > cz_high)
                throw std::invalid_argument(
                    "guidance: conditioning zone [" + std::to_string(cz_low) + "," +
                    std::to_string(cz_high) + "] invalid for T=" + std::to_string(T));
            if (cz_high + travel_depth - 1 > T && repetitions > 1)
                throw std::invalid_argument("guidance: travel_depth escapes the schedule");
        }
    }
};

struct TraceRecord {
    int t = 0;
    int repetition = 0;
    double loss = 0.0;
    double grad_norm = 0.0;
    double alpha = 0.0;
};

struct GuidanceTrace {
    std::vector<TraceRecord> records;

    std::string to_jsonl() const {
        std::ostringstream os;
        for (const auto& r : records) {
            os << "{\"t\":" << r.t << ",\"rep\":" << r.repetition << ",\"loss\":" << r.loss
               << ",\"grad_norm\":" << r.grad_norm << ",\"alpha\":" << r.alpha << "}\n";
        }
        return os.str();
    }
};

// alpha_t: constant, or gradient-RMS normalized with a sqrt(1-abar_t) taper
inline double step_size(StepPolicy policy, double scale, const ModelState& grad, int t,
                        const NoiseSchedule& sched) {
    if (policy == StepPolicy::Constant) return scale;
    double ss = 0.0;
    for (double g : grad) ss += g * g;
    double rms = std::sqrt(ss / static_cast<double>(grad.size()));
    return scale * std::sqrt(1.0 - sched.alpha_bar(t)) / (rms + 1e-12);
}

// Forward kernel applied depth times: noise level t -> t + depth.
inline ModelState time_travel(const ModelState& x, int t, int depth, const NoiseSchedule& sched,
                              Rng& rng) {
    if (t + depth > sched.T) throw std::domain_error("time_travel: t + depth exceeds T");
    ModelState out = x;
    for (int s = t + 1; s <= t + depth; ++s) {
        double b = sched.beta(s);
        double a = std::sqrt(1.0 - b), c = std::sqrt(b);
        for (double& v : out) v = a * v + c * rng.normal();
    }
    return out;
}

struct SampleResult {
    ModelState x0;
    GuidanceTrace trace;
};

namespace detail {

inline ModelState reverse_step(const Denoiser& den, const NoiseSchedule& sched,
                               const GuidanceConfig& cfg, const ModelState& x, int t, int label,
                               Rng& rng) {
    ModelState eps = den.predict(x, sched.training_timestep(t), label);
    check_finite(eps, "eps-hat at t=" + std::to_string(t));
    ModelState noise;
    if (cfg.sampler == SamplerKind::Ddpm) {
        if (t > 1) {
            noise.resize(x.size());
            fill_normal(rng, noise);
        }
        return ddpm_step(x, eps, t, sched, noise);
    }
    if (cfg.eta > 0.0 && t > 1) {
        noise.resize(x.size());
        fill_normal(rng, noise);
    }
    return ddim_step(x, eps, t, t - 1, sched, cfg.eta, noise);
}

}  // namespace detail

// The conditional sampling loop. Outside the zone: plain reverse steps.
// Inside: repeat `repetitions` times { predict eps, form x_{0|t}, evaluate the
// condition, subtract alpha_t * grad from the unguided update, and re-noise
// forward by travel_depth between repetitions }. Deterministic given seed.
// condition == nullptr gives plain unguided sampling with the identical noise
// draw order.
inline SampleResult guided_sample(const Denoiser& den, const NoiseSchedule& sched,
                                  const GuidanceConfig& cfg, const ConditionFn& condition,
                                  uint64_t seed, int label, size_t n_elems) {
    cfg.validate(sched.T, static_cast<bool>(condition));
    if (cfg.grad_mode == GradMode::ThroughDenoiser && condition && !den.supports_input_grad())
        throw std::invalid_argument("guidance: denoiser has no input-gradient capability");

    Rng rng(seed);
    ModelState x(n_elems);
    fill_normal(rng, x);
    SampleResult res;
    // scale 0 degenerates to the unguided chain exactly: no resampling
    // repetitions either, so the noise draw order is bit-identical
    bool active = condition && cfg.step_scale > 0.0;

    for (int t = sched.T; t >= 1; --t) {
        bool in_cz = active && t >= cfg.cz_low && t <= cfg.cz_high;
        int reps = in_cz ? cfg.repetitions : 1;
        for (int rep = 1; rep <= reps; ++rep) {
            ModelState x_prev;
            if (in_cz) {
                int tt = sched.training_timestep(t);
                ModelState eps = den.predict(x, tt, label);
                check_finite(eps, "eps-hat at t=" + std::to_string(t));
                ModelState x0t = predict_x0(x, eps, t, sched);
                LossResult cond = condition(x0t);
                if (!std::isfinite(cond.value))
                    throw std::runtime_error("guidance: non-finite condition loss at t=" +
                                             std::to_string(t));
                check_finite(cond.grad, "condition gradient at t=" + std::to_string(t));
                double ab = sched.alpha_bar(t);
                ModelState g(n_elems);
                if (cfg.grad_mode == GradMode::Skip) {
                    // d x_{0|t} / d x_t taken as the leading 1/sqrt(abar) diagonal
                    double inv = 1.0 / std::sqrt(ab);
                    for (size_t i = 0; i < n_elems; ++i) g[i] = cond.grad[i] * inv;
                } else {
                    ModelState jtv = den.input_vjp(x, tt, label, cond.grad);
                    double inv = 1.0 / std::sqrt(ab), b = std::sqrt(1.0 - ab);
                    for (size_t i = 0; i < n_elems; ++i)
                        g[i] = (cond.grad[i] - b * jtv[i]) * inv;
                }
                double alpha = step_size(cfg.policy, cfg.step_scale, g, t, sched);
                ModelState noise;
                ModelState r;
                if (cfg.sampler == SamplerKind::Ddpm) {
                    if (t > 1) {
                        noise.resize(n_elems);
                        fill_normal(rng, noise);
                    }
                    r = ddpm_step(x, eps, t, sched, noise);
                } else {
                    if (cfg.eta > 0.0 && t > 1) {
                        noise.resize(n_elems);
                        fill_normal(rng, noise);
                    }
                    r = ddim_step(x, eps, t, t - 1, sched, cfg.eta, noise);
                }
                x_prev.resize(n_elems);
                for (size_t i = 0; i < n_elems; ++i) x_prev[i] = r[i] - alpha * g[i];
                double gn = 0.0;
                for (double v : g) gn += v * v;
                res.trace.records.push_back({t, rep, cond.value, std::sqrt(gn), alpha});
            } else {
                x_prev = detail::reverse_step(den, sched, cfg, x, t, label, rng);
            }
            check_finite(x_prev, "state after t=" + std::to_string(t));
            if (rep < reps) {
                // re-noise to level t-1+depth, then descend unguided back to t
                x = time_travel(x_prev, t - 1, cfg.travel_depth, sched, rng);
                for (int s = t - 1 + cfg.travel_depth; s > t; --s)
                    x = detail::reverse_step(den, sched, cfg, x, s, label, rng);
            } else {
                x = std::move(x_prev);
            }
        }
    }
    res.x0 = std::move(x);
    return res;
}

inline SampleResult unguided_sample(const Denoiser& den, const NoiseSchedule& sched,
                                    const GuidanceConfig& cfg, uint64_t seed, int label,
                                    size_t n_elems) {
    return guided_sample(den, sched, cfg, nullptr, seed, label, n_elems);
}

// ---- condition builders -----------------------------------------------------

// color condition: loss_color on the unclamped affine decode of x_{0|t}
inline ConditionFn make_color_condition(SpatialPalette sp, ColorLossConfig cfg, int h, int w) {
    return [sp = std::move(sp), cfg, h, w](const ModelState& x0t) {
        RgbImage rgb = decode_to_rgb(x0t, h, w, /*clamp=*/false);
        LossResult r = loss_color(rgb, sp, cfg);
        for (double& g : r.grad) g *= 0.5;  // chain through the [-1,1]->[0,1] decode
        return r;
    };
}

// edge condition: 1 - softIoU between the soft-thresholded edges of the decode
// and a (hard-thresholded) reference edge map
inline ConditionFn make_edge_condition(EdgeMap ref, double tau, double temp, double smooth_sigma,
                                       int h, int w) {
    return [ref = std::move(ref), tau, temp, smooth_sigma, h, w](const ModelState& x0t) {
        RgbImage rgb = decode_to_rgb(x0t, h, w, /*clamp=*/false);
        EdgeForward fwd = extract_edges_forward(rgb, smooth_sigma);
        EdgeMap soft = soft_threshold_edges(fwd.edges, tau, temp);
        IouLossResult iou = loss_iou(soft, ref);
        std::vector<double> cot(iou.grad.size());
        for (size_t i = 0; i < cot.size(); ++i)
            cot[i] = iou.grad[i] * soft_threshold_deriv(fwd.edges.values[i], tau, temp);
        LossResult r;
        r.value = iou.value;
        r.grad = extract_edges_backward(fwd, cot);
        for (double& g : r.grad) g *= 0.5;
        return r;
    };
}

}  // namespace tintin
