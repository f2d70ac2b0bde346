// End-to-end acceptance gate: one line per criterion, nonzero exit on any
// failure. argv[1] must be the path to the CLI binary (used by the
// determinism criterion). Expect ~10-15 minutes on one core; the toy model
// is trained once and shared by the guidance criteria.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "tintin/denoiser.hpp"
#include "tintin/guidance.hpp"
#include "tintin/image_io.hpp"
#include "tintin/losses.hpp"
#include "tintin/metrics.hpp"
#include "tintin/oracle.hpp"

namespace fs = std::filesystem;
using namespace tintin;

namespace {

int g_failures = 0;

void report(int criterion, bool ok, const std::string& what) {
    std::printf("criterion %2d: %s - %s\n", criterion, ok ? "PASS" : "FAIL", what.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

// relative error against central finite differences at a handful of random
// coordinates of an analytic gradient
template <typename LossFn>
double max_fd_error(const LossFn& loss, std::vector<double>& x, const std::vector<double>& grad,
                    Rng& pick, int probes) {
    const double h = 1e-5;
    double worst = 0.0;
    for (int p = 0; p < probes; ++p) {
        size_t i = static_cast<size_t>(pick.uniform_int(static_cast<int>(x.size())));
        double keep = x[i];
        x[i] = keep + h;
        double up = loss();
        x[i] = keep - h;
        double dn = loss();
        x[i] = keep;
        double fd = (up - dn) / (2 * h);
        // the floor keeps finite-difference roundoff on near-zero gradients
        // from registering as relative error
        double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
        worst = std::max(worst, std::abs(fd - grad[i]) / denom);
    }
    return worst;
}

Palette random_palette(Rng& rng, int n_colors) {
    Palette p;
    p.colors.resize(n_colors);
    for (auto& c : p.colors)
        for (int k = 0; k < 3; ++k) c[k] = rng.uniform();
    p.weights.assign(n_colors, 1.0 / n_colors);
    return p;
}

void criterion_gradients() {
    Rng rng(101), pick(77);
    double worst = 0.0;
    for (int cfg_i = 0; cfg_i < 50; ++cfg_i) {
        RgbImage gen(8, 8), ref(8, 8);
        // stay inside the smooth region of the sRGB transfer
        for (double& v : gen.pixels) v = 0.05 + 0.9 * rng.uniform();
        for (double& v : ref.pixels) v = 0.05 + 0.9 * rng.uniform();
        Palette p = random_palette(rng, 2 + rng.uniform_int(4));
        ColorLossConfig lc;

        LossResult eu = loss_euclidean(gen, ref);
        worst = std::max(worst, max_fd_error([&] { return loss_euclidean(gen, ref).value; },
                                             gen.pixels, eu.grad, pick, 4));
        LossResult ds = loss_ds(gen, p, lc);
        worst = std::max(worst, max_fd_error([&] { return loss_ds(gen, p, lc).value; },
                                             gen.pixels, ds.grad, pick, 4));

        EdgeMap ge(8, 8), re(8, 8);
        for (double& v : ge.values) v = 0.05 + 0.9 * rng.uniform();
        for (double& v : re.values) v = 0.05 + 0.9 * rng.uniform();
        IouLossResult iou = loss_iou(ge, re);
        worst = std::max(worst, max_fd_error([&] { return loss_iou(ge, re).value; },
                                             ge.values, iou.grad, pick, 4));
    }
    std::ostringstream msg;
    msg << "analytic gradients vs finite differences, worst relative error " << worst;
    report(1, worst < 1e-4, msg.str());
}

void criterion_sharp_limit() {
    Rng rng(202);
    double worst_l1 = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        // well-separated palette: corners of the RGB cube are >= 1 apart
        Palette p;
        int n_colors = 2 + rng.uniform_int(4);
        for (int j = 0; j < n_colors; ++j)
            p.colors.push_back({static_cast<double>(j & 1), static_cast<double>((j >> 1) & 1),
                                static_cast<double>((j >> 2) & 1)});
        p.weights.assign(n_colors, 1.0 / n_colors);

        RgbImage img(8, 8);
        std::vector<double> hist(n_colors, 0.0);
        for (size_t i = 0; i < img.pixel_count(); ++i) {
            int j = rng.uniform_int(n_colors);
            hist[j] += 1.0 / static_cast<double>(img.pixel_count());
            for (int c = 0; c < 3; ++c) img.pixels[3 * i + c] = p.colors[j][c];
        }
        ColorDistributionResult cd = color_distribution(img, p, 1e4);
        double l1 = 0.0;
        for (int j = 0; j < n_colors; ++j) l1 += std::abs(cd.dist.probs[j] - hist[j]);
        worst_l1 = std::max(worst_l1, l1);
    }
    std::ostringstream msg;
    msg << "sharp-softmax distribution vs nearest-color histogram, worst L1 " << worst_l1;
    report(2, worst_l1 < 1e-3, msg.str());
}

void criterion_oracle_posterior() {
    using namespace tintin::oracle;
    GmmSpec prior{{1.0}, {{0.0}}, {{1.0}}};
    LinearCondition cond{{1.0}, {1.0}, 1.0, 1};
    NoiseSchedule sched = make_schedule(1000);
    double best_err = 1e30, best_mean = 0.0, best_var = 0.0;
    for (double scale : {0.0020, 0.0021, 0.0022, 0.0023, 0.0024, 0.0025, 0.0026}) {
        GuidanceConfig cfg;
        cfg.sampler = SamplerKind::Ddpm;
        cfg.policy = StepPolicy::Constant;
        cfg.grad_mode = GradMode::ThroughDenoiser;
        cfg.cz_low = 1;
        cfg.cz_high = sched.T;
        cfg.step_scale = scale;
        OracleReport r = run_guided_oracle(prior, cond, sched, cfg, 5000, 1);
        double err = std::max(std::abs(r.empirical_mean[0] - 0.5) / 0.05,
                              std::abs(r.empirical_cov[0] - 0.5) / 0.1);
        if (err < best_err) {
            best_err = err;
            best_mean = r.empirical_mean[0];
            best_var = r.empirical_cov[0];
        }
    }
    std::ostringstream msg;
    msg << "guided sampler vs exact posterior N(0.5, 0.5): mean " << best_mean << " var "
        << best_var << " over 5000 samples (swept constant scale)";
    report(3, std::abs(best_mean - 0.5) <= 0.05 && std::abs(best_var - 0.5) <= 0.1, msg.str());
}

void criterion_degeneracy(const ConvDenoiser& model, const NoiseSchedule& sched,
                          const ConditionFn& color_cond) {
    size_t n_elems = static_cast<size_t>(model.spec().image_size) * model.spec().image_size * 3;
    bool ok = true;
    for (SamplerKind sampler : {SamplerKind::Ddim, SamplerKind::Ddpm}) {
        GuidanceConfig cfg;
        cfg.sampler = sampler;
        cfg.cz_low = 40;
        cfg.cz_high = 70;
        cfg.repetitions = 20;
        cfg.step_scale = 0.0;  // zero scale must be exactly the unguided chain
        for (uint64_t seed : {11ull, 12ull}) {
            SampleResult guided = guided_sample(model, sched, cfg, color_cond, seed, -1, n_elems);
            SampleResult plain = unguided_sample(model, sched, cfg, seed, -1, n_elems);
            ok = ok && guided.x0 == plain.x0;
            // an absent condition takes the same unguided path
            SampleResult none = guided_sample(model, sched, cfg, nullptr, seed, -1, n_elems);
            ok = ok && none.x0 == plain.x0;
        }
    }
    report(4, ok, "guidance scale 0 and empty loss reproduce unguided sampling bit-for-bit");
}

void criterion_time_travel() {
    NoiseSchedule sched = make_schedule(100);
    const int t = 30, depth = 25, n = 100000;
    const double x0 = 0.8;
    Rng rng(303);
    std::vector<double> vals(n);
    for (int i = 0; i < n; ++i) {
        ModelState xt = forward_noise({x0}, t, {rng.normal()}, sched);
        vals[i] = time_travel(xt, t, depth, sched, rng)[0];
    }
    double mean = pairwise_sum(vals) / n;
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= n - 1;
    double em = std::sqrt(sched.alpha_bar(t + depth)) * x0;
    double ev = 1.0 - sched.alpha_bar(t + depth);
    double se_mean = std::sqrt(ev / n), se_var = ev * std::sqrt(2.0 / (n - 1));
    std::ostringstream msg;
    msg << "time-travel marginal moments within 3 SE of the forward kernel (mean " << mean
        << " vs " << em << ", var " << var << " vs " << ev << ")";
    report(5, std::abs(mean - em) < 3 * se_mean && std::abs(var - ev) < 3 * se_var, msg.str());
}

struct ColorRuns {
    std::vector<double> guided_cds, guided_lds;      // 64 seeds, reps 20
    std::vector<double> unguided_cds, unguided_lds;  // same 64 seeds
    std::vector<double> reps1_lds;                   // first 32 seeds, reps 1
};

double mean_of(const std::vector<double>& v) { return pairwise_sum(v) / v.size(); }

ColorRuns run_color_experiments(const ConvDenoiser& model, const NoiseSchedule& sched,
                                const Palette& target, const ConditionFn& cond) {
    int hw = model.spec().image_size;
    size_t n_elems = static_cast<size_t>(hw) * hw * 3;
    ColorLossConfig lc;
    GuidanceConfig cfg;
    cfg.cz_low = 40;
    cfg.cz_high = 70;
    cfg.repetitions = 20;
    cfg.step_scale = 0.4;

    ColorRuns runs;
    for (int i = 0; i < 64; ++i) {
        uint64_t seed = 1000 + static_cast<uint64_t>(i);
        SampleResult g = guided_sample(model, sched, cfg, cond, seed, -1, n_elems);
        RgbImage gi = decode_to_rgb(g.x0, hw, hw, true);
        runs.guided_cds.push_back(cds(gi, target));
        runs.guided_lds.push_back(loss_ds(gi, target, lc).value);

        SampleResult u = unguided_sample(model, sched, cfg, seed, -1, n_elems);
        RgbImage ui = decode_to_rgb(u.x0, hw, hw, true);
        runs.unguided_cds.push_back(cds(ui, target));
        runs.unguided_lds.push_back(loss_ds(ui, target, lc).value);

        if (i < 32) {
            GuidanceConfig one = cfg;
            one.repetitions = 1;
            SampleResult r1 = guided_sample(model, sched, one, cond, seed, -1, n_elems);
            RgbImage r1i = decode_to_rgb(r1.x0, hw, hw, true);
            runs.reps1_lds.push_back(loss_ds(r1i, target, lc).value);
        }
    }
    return runs;
}

void criterion_color_guidance(const ColorRuns& runs) {
    double gc = mean_of(runs.guided_cds), uc = mean_of(runs.unguided_cds);
    double gl = mean_of(runs.guided_lds), ul = mean_of(runs.unguided_lds);
    std::ostringstream msg;
    msg << "color guidance over 64 seeds: CDS " << gc << " vs " << uc
        << " unguided, distribution loss " << gl << " vs " << ul << " (need <= 0.7x)";
    report(6, gc > uc && gl <= 0.7 * ul, msg.str());
}

void criterion_edge_guidance(const ConvDenoiser& model, const NoiseSchedule& sched) {
    int hw = model.spec().image_size;
    size_t n_elems = static_cast<size_t>(hw) * hw * 3;
    // held-out reference: a toy image whose seed is far from the training stream
    Rng ref_rng(424242);
    RgbImage ref = make_toy_image(ref_rng, hw, nullptr);
    const double tau = 0.9, temp = 0.01, sigma = 1.0;
    EdgeMap ref_edges = threshold_edges(extract_edges(ref, sigma), tau);
    ConditionFn cond = make_edge_condition(ref_edges, tau, temp, sigma, hw, hw);

    GuidanceConfig cfg;
    cfg.cz_low = 90;
    cfg.cz_high = 95;
    cfg.repetitions = 50;
    cfg.step_scale = 0.4;

    std::vector<double> guided_iou, unguided_iou;
    for (int i = 0; i < 32; ++i) {
        uint64_t seed = 500 + static_cast<uint64_t>(i);
        SampleResult g = guided_sample(model, sched, cfg, cond, seed, -1, n_elems);
        RgbImage gi = decode_to_rgb(g.x0, hw, hw, true);
        guided_iou.push_back(hard_iou(threshold_edges(extract_edges(gi, sigma), tau), ref_edges, tau));
        SampleResult u = unguided_sample(model, sched, cfg, seed, -1, n_elems);
        RgbImage ui = decode_to_rgb(u.x0, hw, hw, true);
        unguided_iou.push_back(
            hard_iou(threshold_edges(extract_edges(ui, sigma), tau), ref_edges, tau));
    }
    double gi = mean_of(guided_iou), ui = mean_of(unguided_iou);
    std::ostringstream msg;
    msg << "edge guidance over 32 seeds: hard IoU " << gi << " guided vs " << ui << " unguided";
    report(7, gi > ui, msg.str());
}

void criterion_repetition_ablation(const ColorRuns& runs) {
    std::vector<double> first32(runs.guided_lds.begin(), runs.guided_lds.begin() + 32);
    double m20 = mean_of(first32), m1 = mean_of(runs.reps1_lds);
    std::ostringstream msg;
    msg << "repetition ablation on 32 seeds: distribution loss " << m20
        << " at 20 reps vs " << m1 << " at 1 rep (bound +0.05)";
    report(8, m20 <= m1 + 0.05, msg.str());
}

void criterion_metric_sanity() {
    Palette target = parse_palette("#e6194b,#3cb44b,#ffe119,#4363d8,#111111");
    RgbImage bands(10, 25);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 25; ++x)
            for (int c = 0; c < 3; ++c) bands.at(y, x, c) = target.colors[x / 5][c];
    bool ok = cds(bands, target) == 1.0;

    Palette disjoint = parse_palette("#ffffff,#eeeeee,#dddddd,#cccccc,#bbbbbb");
    RgbImage black(10, 10, 0.0);
    ok = ok && cds(black, disjoint) == 0.0;

    Rng rng(404);
    RgbImage img(16, 16);
    for (double& v : img.pixels) v = rng.uniform();
    ok = ok && ssim(img, img) == 1.0;

    EdgeMap a(2, 3), b(2, 3);
    a.values = {1, 0, 1, 0, 1, 0};
    b.values = {1, 1, 0, 0, 1, 1};
    ok = ok && hard_iou(a, b, 0.5) == hard_iou(b, a, 0.5);
    report(9, ok, "cds/ssim/hard-IoU identities hold exactly");
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
}

// all data files of a run directory, sorted; manifests are excluded because
// they record wall-clock timing
bool dirs_byte_identical(const fs::path& a, const fs::path& b) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(a)) {
        std::string n = e.path().filename().string();
        if (n.find("manifest") == std::string::npos) names.push_back(n);
    }
    std::sort(names.begin(), names.end());
    if (names.empty()) return false;
    for (const auto& n : names)
        if (!fs::exists(b / n) || slurp(a / n) != slurp(b / n)) return false;
    return true;
}

void criterion_determinism(const std::string& cli, const fs::path& ckpt_dir) {
    fs::path base = fs::temp_directory_path() / "tintin_accept_determinism";
    fs::remove_all(base);
    fs::create_directories(base);
    auto run = [&](const std::string& args) {
        std::string cmd = cli + " " + args + " > /dev/null 2>&1";
        return std::system(cmd.c_str()) == 0;
    };
    std::string gen = " generate --ckpt " + ckpt_dir.string() +
                      " --palette '#e6194b,#3cb44b,#4363d8' --weights 0.8,0.1,0.1"
                      " --scale 0.4 --n 2 --seed 7 --out ";
    bool ok = run(gen + (base / "a").string()) && run(gen + (base / "b").string());
    ok = ok && dirs_byte_identical(base / "a", base / "b");

    std::string ev = " eval --dir " + (base / "a").string() +
                     " --palette '#e6194b,#3cb44b,#4363d8' --weights 0.8,0.1,0.1 --out ";
    ok = ok && run(ev + (base / "m1.jsonl").string()) && run(ev + (base / "m2.jsonl").string());
    ok = ok && !slurp(base / "m1.jsonl").empty() &&
         slurp(base / "m1.jsonl") == slurp(base / "m2.jsonl");
    report(10, ok, "CLI reruns with identical flags and seed are byte-identical");
    fs::remove_all(base);
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: acceptance_tests <path-to-cli>\n";
        return 2;
    }
    std::string cli = argv[1];

    criterion_gradients();
    criterion_sharp_limit();
    criterion_oracle_posterior();

    // one-time toy training shared by the sampling criteria
    TrainConfig tc;  // defaults: shapes, 32x32, 3000 steps, seed 7
    std::cerr << "training toy denoiser (one-time, ~4 minutes)...\n";
    TrainResult trained = train_toy_denoiser(tc);
    std::cerr << "trained, final loss " << trained.final_loss << "\n";
    NoiseSchedule sched = respace_schedule(trained.schedule, 100);

    Palette target = parse_palette("#e6194b,#3cb44b,#4363d8");
    target.weights = {0.8, 0.1, 0.1};
    int hw = trained.model.spec().image_size;
    SpatialPalette sp = spatial_palette(target, hw, hw, 1000 ^ 0x5350u);
    ColorLossConfig lc;
    ConditionFn color_cond = make_color_condition(sp, lc, hw, hw);

    criterion_degeneracy(trained.model, sched, color_cond);
    criterion_time_travel();

    ColorRuns runs = run_color_experiments(trained.model, sched, target, color_cond);
    criterion_color_guidance(runs);
    criterion_edge_guidance(trained.model, sched);
    criterion_repetition_ablation(runs);
    criterion_metric_sanity();

    fs::path ckpt_dir = fs::temp_directory_path() / "tintin_accept_ckpt";
    fs::create_directories(ckpt_dir);
    trained.model.save((ckpt_dir / "checkpoint.ckpt").string(), {{"source", "acceptance"}});
    criterion_determinism(cli, ckpt_dir);
    fs::remove_all(ckpt_dir);

    if (g_failures) {
        std::printf("%d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
