// tintin: training-free conditional sampling for a toy diffusion model.
// Subcommands: train, generate, eval, oracle. Every command that writes
// outputs also writes a JSONL run manifest sufficient to reproduce it.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tintin/colorspace.hpp"
#include "tintin/denoiser.hpp"
#include "tintin/diffusion.hpp"
#include "tintin/edges.hpp"
#include "tintin/guidance.hpp"
#include "tintin/image_io.hpp"
#include "tintin/losses.hpp"
#include "tintin/metrics.hpp"
#include "tintin/oracle.hpp"
#include "tintin/palette.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

int max_threads() {
    if (const char* env = std::getenv("TINTIN_NUM_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return 1;
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

void write_manifest(const fs::path& path, const std::string& command, const json& config,
                    const std::vector<uint64_t>& seeds, const std::string& ckpt_fingerprint,
                    double wall_seconds, const std::vector<std::string>& outputs) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("manifest: cannot open " + path.string());
    f << json{{"type", "command"}, {"command", command}, {"code_version", kVersion}}.dump() << '\n';
    f << json{{"type", "config"}, {"config", config}}.dump() << '\n';
    f << json{{"type", "seeds"}, {"seeds", seeds}}.dump() << '\n';
    if (!ckpt_fingerprint.empty())
        f << json{{"type", "checkpoint"}, {"fingerprint", ckpt_fingerprint}}.dump() << '\n';
    f << json{{"type", "timing"}, {"wall_seconds", wall_seconds}}.dump() << '\n';
    f << json{{"type", "outputs"}, {"files", outputs}}.dump() << '\n';
}

std::string fingerprint_hex(const tintin::ConvDenoiser& model) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(model.fingerprint()));
    return buf;
}

fs::path resolve_ckpt(const std::string& arg) {
    fs::path p(arg);
    if (fs::is_directory(p)) p /= "checkpoint.ckpt";
    if (!fs::exists(p)) throw std::invalid_argument("checkpoint not found: " + p.string());
    return p;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
    tintin::TrainConfig cfg;
    std::string out;
};

int run_train(const TrainArgs& a) {
    Timer timer;
    tintin::TrainResult res = tintin::train_toy_denoiser(a.cfg);
    fs::path dir(a.out);
    fs::create_directories(dir);
    json manifest{{"dataset", a.cfg.dataset},
                  {"steps", a.cfg.steps},
                  {"batch", a.cfg.batch},
                  {"lr", a.cfg.lr},
                  {"seed", a.cfg.seed},
                  {"initial_loss", res.initial_loss},
                  {"final_loss", res.final_loss}};
    json curve = json::array();
    for (auto [step, loss] : res.loss_curve) curve.push_back({{"step", step}, {"loss", loss}});
    manifest["loss_curve"] = curve;
    fs::path ckpt = dir / "checkpoint.ckpt";
    res.model.save(ckpt.string(), manifest);
    json cfg{{"dataset", a.cfg.dataset}, {"size", a.cfg.image_size}, {"hidden", a.cfg.hidden},
             {"t_train", a.cfg.t_train}, {"steps", a.cfg.steps},     {"batch", a.cfg.batch},
             {"lr", a.cfg.lr},           {"seed", a.cfg.seed},       {"out", a.out}};
    write_manifest(dir / "manifest.jsonl", "train", cfg, {a.cfg.seed}, fingerprint_hex(res.model),
                   timer.seconds(), {ckpt.string()});
    std::cout << "checkpoint " << ckpt.string() << " fingerprint " << fingerprint_hex(res.model)
              << " final_loss " << res.final_loss << '\n';
    return 0;
}

// ---- generate ---------------------------------------------------------------

// comma-separated weights overriding a palette's uniform default
void apply_weights(tintin::Palette& p, const std::string& spec) {
    if (spec.empty()) return;
    std::vector<double> w;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) w.push_back(std::stod(tok));
    if (w.size() != p.size())
        throw std::invalid_argument("--weights: expected " + std::to_string(p.size()) +
                                    " entries, got " + std::to_string(w.size()));
    p.weights = std::move(w);
    p.validate();
}

struct GenerateArgs {
    std::string ckpt;
    std::string palette;
    std::string weights;
    std::string edge_ref;
    std::string cz;  // "LOW:HIGH"
    int reps = -1;
    int travel = 1;
    double scale = -1.0;
    std::string policy = "normalized";
    std::string grad = "skip";
    int steps = 100;
    double eta = 0.0;
    int n = 1;
    uint64_t seed = 0;
    int label = -1;
    double rho = 100.0, lambda1 = 1.0, lambda2 = 0.1;
    double edge_tau = 0.9, edge_temp = 0.01, edge_sigma = 1.0;
    std::string out = "out";
};

int run_generate(const GenerateArgs& a) {
    Timer timer;
    bool color_mode = !a.palette.empty();
    bool edge_mode = !a.edge_ref.empty();
    if (color_mode && edge_mode)
        throw std::invalid_argument(
            "generate: --palette and --edge-ref are mutually exclusive (single-condition only)");

    fs::path ckpt_path = resolve_ckpt(a.ckpt);
    tintin::ConvDenoiser model = tintin::ConvDenoiser::load(ckpt_path.string());
    int hw = model.spec().image_size;
    tintin::NoiseSchedule full = tintin::make_schedule(model.spec().t_train);
    tintin::NoiseSchedule sched = tintin::respace_schedule(full, a.steps);

    tintin::GuidanceConfig cfg;
    cfg.sampler = tintin::SamplerKind::Ddim;
    cfg.eta = a.eta;
    cfg.travel_depth = a.travel;
    cfg.policy = a.policy == "constant" ? tintin::StepPolicy::Constant
                                        : tintin::StepPolicy::Normalized;
    cfg.grad_mode = a.grad == "through" ? tintin::GradMode::ThroughDenoiser : tintin::GradMode::Skip;
    // per-condition defaults, overridable by flags
    if (color_mode) {
        cfg.cz_low = 40;
        cfg.cz_high = 70;
        cfg.repetitions = 20;
    } else if (edge_mode) {
        cfg.cz_low = 90;
        cfg.cz_high = 95;
        cfg.repetitions = 50;
    }
    if (!a.cz.empty()) {
        size_t colon = a.cz.find(':');
        if (colon == std::string::npos)
            throw std::invalid_argument("generate: --cz expects LOW:HIGH");
        cfg.cz_low = std::stoi(a.cz.substr(0, colon));
        cfg.cz_high = std::stoi(a.cz.substr(colon + 1));
    }
    if (a.reps > 0) cfg.repetitions = a.reps;
    cfg.step_scale = a.scale >= 0.0 ? a.scale : 0.4;

    tintin::ConditionFn condition;
    if (color_mode) {
        tintin::Palette p = tintin::parse_palette(a.palette);
        apply_weights(p, a.weights);
        tintin::SpatialPalette sp = tintin::spatial_palette(p, hw, hw, a.seed ^ 0x5350u);
        tintin::ColorLossConfig lc;
        lc.rho = a.rho;
        lc.lambda1 = a.lambda1;
        lc.lambda2 = a.lambda2;
        condition = tintin::make_color_condition(std::move(sp), lc, hw, hw);
    } else if (edge_mode) {
        tintin::RgbImage ref = tintin::read_png(a.edge_ref);
        tintin::EdgeMap edges = tintin::threshold_edges(
            tintin::extract_edges(ref, a.edge_sigma), a.edge_tau);
        condition = tintin::make_edge_condition(std::move(edges), a.edge_tau, a.edge_temp,
                                                a.edge_sigma, hw, hw);
    }

    fs::path dir(a.out);
    fs::create_directories(dir);
    std::vector<std::string> outputs(a.n);
    std::vector<std::string> traces(a.n);
    std::vector<uint64_t> seeds(a.n);
    size_t n_elems = static_cast<size_t>(hw) * hw * 3;

    auto worker = [&](int i) {
        uint64_t seed = a.seed + static_cast<uint64_t>(i);
        seeds[i] = seed;
        tintin::SampleResult res =
            tintin::guided_sample(model, sched, cfg, condition, seed, a.label, n_elems);
        tintin::RgbImage img = tintin::decode_to_rgb(res.x0, hw, hw, /*clamp=*/true);
        char name[64];
        std::snprintf(name, sizeof name, "img_%04d.png", i);
        fs::path img_path = dir / name;
        tintin::write_png(img_path.string(), img);
        outputs[i] = img_path.string();
        if (condition) {
            std::snprintf(name, sizeof name, "trace_%04d.jsonl", i);
            fs::path tr = dir / name;
            std::ofstream f(tr, std::ios::trunc);
            f << res.trace.to_jsonl();
            traces[i] = tr.string();
        }
    };
    int threads = std::min(max_threads(), a.n);
    if (threads <= 1) {
        for (int i = 0; i < a.n; ++i) worker(i);
    } else {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        for (int k = 0; k < threads; ++k)
            pool.emplace_back([&] {
                for (int i = next++; i < a.n; i = next++) worker(i);
            });
        for (auto& th : pool) th.join();
    }

    for (const auto& t : traces)
        if (!t.empty()) outputs.push_back(t);
    json cfg_json{{"ckpt", ckpt_path.string()},
                  {"palette", a.palette},
                  {"weights", a.weights},
                  {"edge_ref", a.edge_ref},
                  {"cz_low", cfg.cz_low},
                  {"cz_high", cfg.cz_high},
                  {"reps", cfg.repetitions},
                  {"travel", cfg.travel_depth},
                  {"scale", cfg.step_scale},
                  {"policy", a.policy},
                  {"grad", a.grad},
                  {"steps", a.steps},
                  {"eta", a.eta},
                  {"n", a.n},
                  {"seed", a.seed},
                  {"label", a.label},
                  {"rho", a.rho},
                  {"lambda1", a.lambda1},
                  {"lambda2", a.lambda2},
                  {"edge_tau", a.edge_tau},
                  {"edge_temp", a.edge_temp},
                  {"edge_sigma", a.edge_sigma},
                  {"out", a.out}};
    write_manifest(dir / "manifest.jsonl", "generate", cfg_json, seeds, fingerprint_hex(model),
                   timer.seconds(), outputs);
    std::cout << "wrote " << a.n << " image(s) to " << dir.string() << '\n';
    return 0;
}

// ---- eval ---------------------------------------------------------------

struct EvalArgs {
    std::string dir;
    std::string palette;
    std::string weights;
    std::string edge_ref;
    int k = 5;
    double match_tau = 20.0;
    double tau = 0.9;
    double sigma = 1.0;
    std::string out;
};

int run_eval(const EvalArgs& a) {
    Timer timer;
    bool color_mode = !a.palette.empty();
    bool edge_mode = !a.edge_ref.empty();
    if (color_mode == edge_mode)
        throw std::invalid_argument("eval: exactly one of --palette / --edge-ref is required");

    std::vector<fs::path> images;
    for (const auto& e : fs::directory_iterator(a.dir))
        if (e.path().extension() == ".png" &&
            e.path().filename().string().rfind("img_", 0) == 0)
            images.push_back(e.path());
    std::sort(images.begin(), images.end());
    if (images.empty()) throw std::invalid_argument("eval: no img_*.png files in " + a.dir);

    tintin::MetricsReport report;
    if (color_mode) {
        tintin::Palette target = tintin::parse_palette(a.palette);
        apply_weights(target, a.weights);
        tintin::ColorLossConfig lc;
        uint64_t idx = 0;
        for (const auto& p : images) {
            tintin::RgbImage img = tintin::read_png(p.string());
            report.add(idx, "cds", tintin::cds(img, target, a.k, a.match_tau));
            report.add(idx, "lds", tintin::loss_ds(img, target, lc).value);
            ++idx;
        }
    } else {
        tintin::RgbImage ref = tintin::read_png(a.edge_ref);
        tintin::EdgeMap ref_edges =
            tintin::threshold_edges(tintin::extract_edges(ref, a.sigma), a.tau);
        uint64_t idx = 0;
        for (const auto& p : images) {
            tintin::RgbImage img = tintin::read_png(p.string());
            tintin::EdgeMap gen_edges =
                tintin::threshold_edges(tintin::extract_edges(img, a.sigma), a.tau);
            report.add(idx, "iou", tintin::hard_iou(gen_edges, ref_edges, a.tau));
            report.add(idx, "ssim", tintin::ssim(gen_edges, ref_edges));
            report.add(idx, "mse", tintin::mse(gen_edges, ref_edges));
            ++idx;
        }
    }

    std::string out_path = a.out.empty() ? (fs::path(a.dir) / "metrics.jsonl").string() : a.out;
    {
        std::ofstream f(out_path, std::ios::trunc);
        f << report.to_jsonl();
    }
    std::cout << report.summary_table();
    json cfg{{"dir", a.dir},       {"palette", a.palette},     {"weights", a.weights},
             {"edge_ref", a.edge_ref}, {"k", a.k},              {"match_tau", a.match_tau},
             {"tau", a.tau},       {"sigma", a.sigma},         {"out", out_path}};
    write_manifest(fs::path(a.dir) / "eval_manifest.jsonl", "eval", cfg, {}, "", timer.seconds(),
                   {out_path});
    return 0;
}

// ---- oracle ---------------------------------------------------------------

struct OracleArgs {
    std::string scenario;
    int n = 5000;
    uint64_t seed = 1;
    std::string out;
};

int run_oracle(const OracleArgs& a) {
    using namespace tintin::oracle;
    std::ostringstream report;
    bool pass = true;

    if (a.scenario == "gaussian-1d") {
        GmmSpec prior{{1.0}, {{0.0}}, {{1.0}}};
        LinearCondition cond{{1.0}, {1.0}, 1.0, 1};
        tintin::NoiseSchedule sched = tintin::make_schedule(1000);
        GmmSpec post = exact_conditional_posterior(prior, cond);
        report << "exact posterior mean " << post.means[0][0] << " var "
               << post.covariances[0][0] << '\n';
        double best_err = 1e30;
        OracleReport best;
        double best_scale = 0.0;
        for (double scale : {0.0020, 0.0021, 0.0022, 0.0023, 0.0024, 0.0025, 0.0026}) {
            tintin::GuidanceConfig cfg;
            cfg.sampler = tintin::SamplerKind::Ddpm;
            cfg.policy = tintin::StepPolicy::Constant;
            cfg.grad_mode = tintin::GradMode::ThroughDenoiser;
            cfg.cz_low = 1;
            cfg.cz_high = sched.T;
            cfg.step_scale = scale;
            OracleReport r = run_guided_oracle(prior, cond, sched, cfg, a.n, a.seed);
            double err = std::max(std::abs(r.empirical_mean[0] - 0.5) / 0.05,
                                  std::abs(r.empirical_cov[0] - 0.5) / 0.1);
            report << "scale " << scale << " mean " << r.empirical_mean[0] << " var "
                   << r.empirical_cov[0] << '\n';
            if (err < best_err) {
                best_err = err;
                best = r;
                best_scale = scale;
            }
        }
        pass = std::abs(best.empirical_mean[0] - 0.5) <= 0.05 &&
               std::abs(best.empirical_cov[0] - 0.5) <= 0.1;
        report << "best scale " << best_scale << "\n" << best.to_text();
    } else if (a.scenario == "score-fd") {
        GmmSpec spec{{0.4, 0.6}, {{-1.0, 0.5}, {1.5, -0.2}},
                     {{0.8, 0.1, 0.1, 0.5}, {1.2, -0.2, -0.2, 0.9}}};
        tintin::NoiseSchedule sched = tintin::make_schedule(100);
        tintin::Rng rng(a.seed);
        double worst = 0.0;
        for (int trial = 0; trial < 50; ++trial) {
            int t = 1 + rng.uniform_int(100);
            Vec x{2.0 * rng.normal(), 2.0 * rng.normal()};
            ScoreResult s = gmm_score(spec, x, t, sched);
            // finite differences of the exact noised log density
            auto logp = [&](const Vec& p) {
                double ab = sched.alpha_bar(t);
                double total = -1e300;
                for (size_t k = 0; k < spec.components(); ++k) {
                    Mat C(4);
                    for (int i = 0; i < 2; ++i)
                        for (int j = 0; j < 2; ++j)
                            C[i * 2 + j] = ab * spec.covariances[k][i * 2 + j] +
                                           (i == j ? 1.0 - ab : 0.0);
                    Mat L = cholesky(C, 2);
                    Vec diff{p[0] - std::sqrt(ab) * spec.means[k][0],
                             p[1] - std::sqrt(ab) * spec.means[k][1]};
                    Vec pd = chol_solve(L, 2, diff);
                    double lw = std::log(spec.weights[k]) -
                                0.5 * (chol_logdet(L, 2) + diff[0] * pd[0] + diff[1] * pd[1]);
                    total = total > lw ? total + std::log1p(std::exp(lw - total))
                                       : lw + std::log1p(std::exp(total - lw));
                }
                return total;
            };
            for (int i = 0; i < 2; ++i) {
                Vec xp = x, xm = x;
                xp[i] += 1e-6;
                xm[i] -= 1e-6;
                double fd = (logp(xp) - logp(xm)) / 2e-6;
                double rel = std::abs(fd - s.score[i]) / std::max(std::abs(fd), 1e-12);
                worst = std::max(worst, rel);
            }
        }
        report << "worst relative score error vs finite differences: " << worst << '\n';
        pass = worst < 1e-6;
    } else if (a.scenario == "time-travel") {
        tintin::NoiseSchedule sched = tintin::make_schedule(100);
        tintin::Rng rng(a.seed);
        int t = 30, depth = 10, n = 100000;
        std::vector<double> vals(n);
        for (int i = 0; i < n; ++i) {
            tintin::ModelState x{0.0};
            x = tintin::time_travel(x, t, depth, sched, rng);
            vals[i] = x[0];
        }
        double mean = tintin::pairwise_sum(vals) / n;
        double var = 0.0;
        for (double v : vals) var += (v - mean) * (v - mean);
        var /= n - 1;
        double expect = 1.0;
        for (int s = t + 1; s <= t + depth; ++s) expect *= 1.0 - sched.beta(s);
        expect = 1.0 - expect;
        report << "time-travel variance from a point mass: empirical " << var << " expected "
               << expect << '\n';
        pass = std::abs(var - expect) / expect < 0.02;
    } else {
        throw std::invalid_argument(
            "oracle: unknown scenario \"" + a.scenario +
            "\" (available: gaussian-1d, score-fd, time-travel)");
    }

    std::cout << report.str();
    std::cout << (pass ? "PASS" : "FAIL") << '\n';
    if (!a.out.empty()) {
        std::ofstream f(a.out, std::ios::trunc);
        f << report.str() << (pass ? "PASS" : "FAIL") << '\n';
    }
    return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"training-free color/edge conditioned sampling for a toy diffusion model"};
    app.require_subcommand(1);

    TrainArgs ta;
    CLI::App* train = app.add_subcommand("train", "train the toy denoiser");
    train->set_config("--config");
    train->add_option("--dataset", ta.cfg.dataset, "shapes | single")->capture_default_str();
    train->add_option("--size", ta.cfg.image_size)->capture_default_str();
    train->add_option("--hidden", ta.cfg.hidden)->capture_default_str();
    train->add_option("--t-train", ta.cfg.t_train)->capture_default_str();
    train->add_option("--steps", ta.cfg.steps)->capture_default_str();
    train->add_option("--batch", ta.cfg.batch)->capture_default_str();
    train->add_option("--lr", ta.cfg.lr)->capture_default_str();
    train->add_option("--seed", ta.cfg.seed)->capture_default_str();
    train->add_option("--out", ta.out, "output directory")->required();

    GenerateArgs ga;
    CLI::App* gen = app.add_subcommand("generate", "sample images, optionally guided");
    gen->set_config("--config");
    gen->add_option("--ckpt", ga.ckpt, "checkpoint file or directory")->required();
    gen->add_option("--palette", ga.palette, "comma-separated #RRGGBB list for color guidance");
    gen->add_option("--weights", ga.weights,
                    "comma-separated target weights for --palette (default uniform)");
    gen->add_option("--edge-ref", ga.edge_ref, "reference image for edge guidance");
    gen->add_option("--cz", ga.cz, "conditioning zone LOW:HIGH");
    gen->add_option("--reps", ga.reps, "repetitions per timestep in the zone");
    gen->add_option("--travel", ga.travel)->capture_default_str();
    gen->add_option("--scale", ga.scale, "guidance step scale");
    gen->add_option("--policy", ga.policy, "normalized | constant")->capture_default_str();
    gen->add_option("--grad", ga.grad, "through | skip")->capture_default_str();
    gen->add_option("--steps", ga.steps)->capture_default_str();
    gen->add_option("--eta", ga.eta)->capture_default_str();
    gen->add_option("--n", ga.n)->capture_default_str();
    gen->add_option("--seed", ga.seed)->capture_default_str();
    gen->add_option("--label", ga.label)->capture_default_str();
    gen->add_option("--rho", ga.rho)->capture_default_str();
    gen->add_option("--lambda1", ga.lambda1)->capture_default_str();
    gen->add_option("--lambda2", ga.lambda2)->capture_default_str();
    gen->add_option("--edge-tau", ga.edge_tau)->capture_default_str();
    gen->add_option("--edge-temp", ga.edge_temp)->capture_default_str();
    gen->add_option("--edge-sigma", ga.edge_sigma)->capture_default_str();
    gen->add_option("--out", ga.out, "output directory")->capture_default_str();

    EvalArgs ea;
    CLI::App* ev = app.add_subcommand("eval", "score a directory of generated images");
    ev->set_config("--config");
    ev->add_option("--dir", ea.dir, "directory of img_*.png")->required();
    ev->add_option("--palette", ea.palette, "target palette for CDS");
    ev->add_option("--weights", ea.weights, "target weights for --palette (default uniform)");
    ev->add_option("--edge-ref", ea.edge_ref, "reference image for IoU/SSIM/MSE");
    ev->add_option("--k", ea.k)->capture_default_str();
    ev->add_option("--match-tau", ea.match_tau)->capture_default_str();
    ev->add_option("--tau", ea.tau)->capture_default_str();
    ev->add_option("--sigma", ea.sigma)->capture_default_str();
    ev->add_option("--out", ea.out, "report file (default DIR/metrics.jsonl)");

    OracleArgs oa;
    CLI::App* orc = app.add_subcommand("oracle", "analytic verification scenarios");
    orc->add_option("--scenario", oa.scenario, "gaussian-1d | score-fd | time-travel")->required();
    orc->add_option("--n", oa.n)->capture_default_str();
    orc->add_option("--seed", oa.seed)->capture_default_str();
    orc->add_option("--out", oa.out, "report file");

    try {
        app.parse(argc, argv);
        if (train->parsed()) return run_train(ta);
        if (gen->parsed()) return run_generate(ga);
        if (ev->parsed()) return run_eval(ea);
        if (orc->parsed()) return run_oracle(oa);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::domain_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
