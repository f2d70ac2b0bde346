#pragma once

#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tintin/diffusion.hpp"
#include "tintin/image.hpp"
#include "tintin/palette.hpp"

// The epsilon-prediction backbone: an abstract denoiser contract, a small
// convolutional network trained from scratch on procedurally generated shape
// images, and a versioned binary checkpoint container.

namespace tintin {

class Denoiser {
  public:
    virtual ~Denoiser() = default;
    // eps-hat for state x at training timestep t; label < 0 means unconditional
    virtual ModelState predict(const ModelState& x, int t, int label) const = 0;
    // whether input_vjp is available (grad_mode=through_denoiser needs it)
    virtual bool supports_input_grad() const = 0;
    // J^T v where J is d(eps-hat)/dx at (x, t, label)
    virtual ModelState input_vjp(const ModelState& x, int t, int label,
                                 const ModelState& cotangent) const = 0;
};

namespace nn {

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
inline double silu_deriv(double x) {
    double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

// 3x3 zero-padded convolution, HWC layout, weights [cout][cin][ky][kx]
inline void conv3x3(const double* in, int h, int w, int cin, const double* wgt, const double* bias,
                    int cout, double* out) {
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int co = 0; co < cout; ++co) {
                double acc = bias[co];
                for (int ky = -1; ky <= 1; ++ky) {
                    int yy = y + ky;
                    if (yy < 0 || yy >= h) continue;
                    for (int kx = -1; kx <= 1; ++kx) {
                        int xx = x + kx;
                        if (xx < 0 || xx >= w) continue;
                        const double* px = in + (static_cast<size_t>(yy) * w + xx) * cin;
                        const double* wk = wgt + ((static_cast<size_t>(co) * cin) * 9) +
                                           (ky + 1) * 3 + (kx + 1);
                        for (int ci = 0; ci < cin; ++ci) acc += wk[ci * 9] * px[ci];
                    }
                }
                out[(static_cast<size_t>(y) * w + x) * cout + co] = acc;
            }
}

// backward: cotangent of output -> cotangent of input (optional) and weight /
// bias gradients (optional, accumulated)
inline void conv3x3_backward(const double* in, int h, int w, int cin, const double* wgt, int cout,
                             const double* cot_out, double* cot_in, double* gw, double* gb) {
    if (cot_in) std::memset(cot_in, 0, sizeof(double) * h * w * cin);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int co = 0; co < cout; ++co) {
                double c = cot_out[(static_cast<size_t>(y) * w + x) * cout + co];
                if (c == 0.0) continue;
                if (gb) gb[co] += c;
                for (int ky = -1; ky <= 1; ++ky) {
                    int yy = y + ky;
                    if (yy < 0 || yy >= h) continue;
                    for (int kx = -1; kx <= 1; ++kx) {
                        int xx = x + kx;
                        if (xx < 0 || xx >= w) continue;
                        size_t pix = (static_cast<size_t>(yy) * w + xx) * cin;
                        size_t wbase = (static_cast<size_t>(co) * cin) * 9 + (ky + 1) * 3 + (kx + 1);
                        for (int ci = 0; ci < cin; ++ci) {
                            if (gw) gw[wbase + ci * 9] += c * in[pix + ci];
                            if (cot_in) cot_in[pix + ci] += c * wgt[wbase + ci * 9];
                        }
                    }
                }
            }
}

inline std::vector<double> time_embedding(int t, int t_train, int dim) {
    std::vector<double> e(dim);
    double pos = static_cast<double>(t) / t_train * 1000.0;
    for (int k = 0; k < dim / 2; ++k) {
        double freq = std::exp(-std::log(10000.0) * 2.0 * k / dim);
        e[2 * k] = std::sin(pos * freq);
        e[2 * k + 1] = std::cos(pos * freq);
    }
    return e;
}

}  // namespace nn

struct ConvDenoiserSpec {
    int image_size = 32;
    int hidden = 16;
    int t_train = 1000;
    int n_labels = 3;
    int emb_dim = 32;
};

// Four 3x3 conv layers with SiLU, sinusoidal time embedding projected into
// the three hidden layers, learned class embedding added after the first.
class ConvDenoiser : public Denoiser {
  public:
    ConvDenoiser() = default;

    explicit ConvDenoiser(const ConvDenoiserSpec& spec, uint64_t init_seed = 1)
        : spec_(spec) {
        layout();
        params_.assign(n_params_, 0.0);
        Rng rng(init_seed);
        auto he_init = [&](size_t off, size_t count, int fan_in) {
            double std = std::sqrt(2.0 / fan_in);
            for (size_t i = 0; i < count; ++i) params_[off + i] = std * rng.normal();
        };
        int C = spec_.hidden, E = spec_.emb_dim;
        he_init(w1_, static_cast<size_t>(C) * 3 * 9, 3 * 9);
        he_init(w2_, static_cast<size_t>(C) * C * 9, C * 9);
        he_init(w3_, static_cast<size_t>(C) * C * 9, C * 9);
        he_init(w4_, static_cast<size_t>(3) * C * 9, C * 9);
        he_init(tw1_, static_cast<size_t>(C) * E, E);
        he_init(tw2_, static_cast<size_t>(C) * E, E);
        he_init(tw3_, static_cast<size_t>(C) * E, E);
        // biases and label table start at zero
    }

    const ConvDenoiserSpec& spec() const { return spec_; }
    std::vector<double>& parameters() { return params_; }
    const std::vector<double>& parameters() const { return params_; }
    size_t parameter_count() const { return n_params_; }

    struct Cache {
        std::vector<double> x, z1, h1, z2, h2, z3, h3, out, temb;
        int label = -1, t = 0;
    };

    void forward(const ModelState& x, int t, int label, Cache& c) const {
        int h = spec_.image_size, w = spec_.image_size, C = spec_.hidden;
        size_t hw = static_cast<size_t>(h) * w;
        if (x.size() != hw * 3) throw std::domain_error("ConvDenoiser: input shape mismatch");
        c.x = x;
        c.t = t;
        c.label = label;
        c.temb = nn::time_embedding(t, spec_.t_train, spec_.emb_dim);
        c.z1.resize(hw * C);
        nn::conv3x3(x.data(), h, w, 3, &params_[w1_], &params_[b1_], C, c.z1.data());
        add_channel_bias(c.z1, project_temb(tw1_, c.temb), C);
        if (label >= 0) {
            if (label >= spec_.n_labels) throw std::domain_error("ConvDenoiser: label out of range");
            std::vector<double> lab(C);
            for (int i = 0; i < C; ++i) lab[i] = params_[lab_ + static_cast<size_t>(label) * C + i];
            add_channel_bias(c.z1, lab, C);
        }
        c.h1 = apply_silu(c.z1);
        c.z2.resize(hw * C);
        nn::conv3x3(c.h1.data(), h, w, C, &params_[w2_], &params_[b2_], C, c.z2.data());
        add_channel_bias(c.z2, project_temb(tw2_, c.temb), C);
        c.h2 = apply_silu(c.z2);
        c.z3.resize(hw * C);
        nn::conv3x3(c.h2.data(), h, w, C, &params_[w3_], &params_[b3_], C, c.z3.data());
        add_channel_bias(c.z3, project_temb(tw3_, c.temb), C);
        c.h3 = apply_silu(c.z3);
        c.out.resize(hw * 3);
        nn::conv3x3(c.h3.data(), h, w, C, &params_[w4_], &params_[b4_], 3, c.out.data());
    }

    // cot w.r.t. output -> cot w.r.t. input; param_grad (same layout as
    // params) is accumulated when non-null
    ModelState backward(const Cache& c, const ModelState& cot_out,
                        std::vector<double>* param_grad) const {
        int h = spec_.image_size, w = spec_.image_size, C = spec_.hidden;
        size_t hw = static_cast<size_t>(h) * w;
        auto g = [&](size_t off) { return param_grad ? param_grad->data() + off : nullptr; };

        std::vector<double> cot_h3(hw * C);
        nn::conv3x3_backward(c.h3.data(), h, w, C, &params_[w4_], 3, cot_out.data(),
                             cot_h3.data(), g(w4_), g(b4_));
        std::vector<double> cot_z3 = silu_backward(c.z3, cot_h3);
        accumulate_temb_grad(tw3_, cot_z3, c.temb, C, param_grad);
        std::vector<double> cot_h2(hw * C);
        nn::conv3x3_backward(c.h2.data(), h, w, C, &params_[w3_], C, cot_z3.data(),
                             cot_h2.data(), g(w3_), g(b3_));
        std::vector<double> cot_z2 = silu_backward(c.z2, cot_h2);
        accumulate_temb_grad(tw2_, cot_z2, c.temb, C, param_grad);
        std::vector<double> cot_h1(hw * C);
        nn::conv3x3_backward(c.h1.data(), h, w, C, &params_[w2_], C, cot_z2.data(),
                             cot_h1.data(), g(w2_), g(b2_));
        std::vector<double> cot_z1 = silu_backward(c.z1, cot_h1);
        accumulate_temb_grad(tw1_, cot_z1, c.temb, C, param_grad);
        if (param_grad && c.label >= 0) {
            double* gl = param_grad->data() + lab_ + static_cast<size_t>(c.label) * C;
            for (size_t p = 0; p < hw; ++p)
                for (int i = 0; i < C; ++i) gl[i] += cot_z1[p * C + i];
        }
        ModelState cot_x(hw * 3);
        nn::conv3x3_backward(c.x.data(), h, w, 3, &params_[w1_], C, cot_z1.data(),
                             cot_x.data(), g(w1_), g(b1_));
        return cot_x;
    }

    ModelState predict(const ModelState& x, int t, int label) const override {
        Cache c;
        forward(x, t, label, c);
        return std::move(c.out);
    }

    bool supports_input_grad() const override { return true; }

    ModelState input_vjp(const ModelState& x, int t, int label,
                         const ModelState& cot) const override {
        Cache c;
        forward(x, t, label, c);
        return backward(c, cot, nullptr);
    }

    uint64_t fingerprint() const {
        // FNV-1a over the raw parameter bytes
        const unsigned char* p = reinterpret_cast<const unsigned char*>(params_.data());
        size_t n = params_.size() * sizeof(double);
        uint64_t hash = 1469598103934665603ull;
        for (size_t i = 0; i < n; ++i) {
            hash ^= p[i];
            hash *= 1099511628211ull;
        }
        return hash;
    }

    void save(const std::string& path, const nlohmann::json& manifest) const;
    static ConvDenoiser load(const std::string& path, nlohmann::json* manifest_out = nullptr);

  private:
    void layout() {
        int C = spec_.hidden, E = spec_.emb_dim;
        size_t off = 0;
        auto take = [&](size_t n) { size_t o = off; off += n; return o; };
        w1_ = take(static_cast<size_t>(C) * 3 * 9);
        b1_ = take(C);
        tw1_ = take(static_cast<size_t>(C) * E);
        w2_ = take(static_cast<size_t>(C) * C * 9);
        b2_ = take(C);
        tw2_ = take(static_cast<size_t>(C) * E);
        w3_ = take(static_cast<size_t>(C) * C * 9);
        b3_ = take(C);
        tw3_ = take(static_cast<size_t>(C) * E);
        w4_ = take(static_cast<size_t>(3) * C * 9);
        b4_ = take(3);
        lab_ = take(static_cast<size_t>(spec_.n_labels) * C);
        n_params_ = off;
    }

    std::vector<double> project_temb(size_t woff, const std::vector<double>& temb) const {
        int C = spec_.hidden, E = spec_.emb_dim;
        std::vector<double> out(C, 0.0);
        for (int i = 0; i < C; ++i) {
            const double* row = &params_[woff + static_cast<size_t>(i) * E];
            double acc = 0.0;
            for (int k = 0; k < E; ++k) acc += row[k] * temb[k];
            out[i] = acc;
        }
        return out;
    }

    void accumulate_temb_grad(size_t woff, const std::vector<double>& cot_z,
                              const std::vector<double>& temb, int C,
                              std::vector<double>* param_grad) const {
        if (!param_grad) return;
        int E = spec_.emb_dim;
        size_t hw = cot_z.size() / C;
        std::vector<double> per_channel(C, 0.0);
        for (size_t p = 0; p < hw; ++p)
            for (int i = 0; i < C; ++i) per_channel[i] += cot_z[p * C + i];
        for (int i = 0; i < C; ++i)
            for (int k = 0; k < E; ++k)
                (*param_grad)[woff + static_cast<size_t>(i) * E + k] += per_channel[i] * temb[k];
    }

    static void add_channel_bias(std::vector<double>& z, const std::vector<double>& bias, int C) {
        size_t hw = z.size() / C;
        for (size_t p = 0; p < hw; ++p)
            for (int i = 0; i < C; ++i) z[p * C + i] += bias[i];
    }

    static std::vector<double> apply_silu(const std::vector<double>& z) {
        std::vector<double> h(z.size());
        for (size_t i = 0; i < z.size(); ++i) h[i] = nn::silu(z[i]);
        return h;
    }

    static std::vector<double> silu_backward(const std::vector<double>& z,
                                             const std::vector<double>& cot_h) {
        std::vector<double> cot_z(z.size());
        for (size_t i = 0; i < z.size(); ++i) cot_z[i] = cot_h[i] * nn::silu_deriv(z[i]);
        return cot_z;
    }

    ConvDenoiserSpec spec_;
    std::vector<double> params_;
    size_t w1_ = 0, b1_ = 0, tw1_ = 0, w2_ = 0, b2_ = 0, tw2_ = 0;
    size_t w3_ = 0, b3_ = 0, tw3_ = 0, w4_ = 0, b4_ = 0, lab_ = 0;
    size_t n_params_ = 0;
};

// ---- checkpoint container -------------------------------------------------

constexpr uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[8] = {'T', 'I', 'N', 'T', 'I', 'N', 'C', 'K'};

inline void ConvDenoiser::save(const std::string& path, const nlohmann::json& manifest) const {
    nlohmann::json header;
    header["image_size"] = spec_.image_size;
    header["hidden"] = spec_.hidden;
    header["t_train"] = spec_.t_train;
    header["n_labels"] = spec_.n_labels;
    header["emb_dim"] = spec_.emb_dim;
    header["manifest"] = manifest;
    std::string hs = header.dump();
    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("checkpoint: cannot open " + tmp);
        f.write(kCheckpointMagic, 8);
        uint32_t ver = kCheckpointVersion;
        f.write(reinterpret_cast<const char*>(&ver), 4);
        uint64_t hlen = hs.size();
        f.write(reinterpret_cast<const char*>(&hlen), 8);
        f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        uint64_t count = params_.size();
        f.write(reinterpret_cast<const char*>(&count), 8);
        f.write(reinterpret_cast<const char*>(params_.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (!f) throw std::runtime_error("checkpoint: write failed for " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("checkpoint: rename failed for " + path);
}

inline ConvDenoiser ConvDenoiser::load(const std::string& path, nlohmann::json* manifest_out) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    uint32_t ver = 0;
    f.read(reinterpret_cast<char*>(&ver), 4);
    if (ver != kCheckpointVersion)
        throw std::runtime_error("checkpoint: version mismatch (file version " +
                                 std::to_string(ver) + ", supported version " +
                                 std::to_string(kCheckpointVersion) + ")");
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 8);
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    nlohmann::json header = nlohmann::json::parse(hs);
    ConvDenoiserSpec spec;
    spec.image_size = header.at("image_size");
    spec.hidden = header.at("hidden");
    spec.t_train = header.at("t_train");
    spec.n_labels = header.at("n_labels");
    spec.emb_dim = header.at("emb_dim");
    if (manifest_out) *manifest_out = header.value("manifest", nlohmann::json::object());
    ConvDenoiser d(spec, 0);
    uint64_t count = 0;
    f.read(reinterpret_cast<char*>(&count), 8);
    if (count != d.params_.size())
        throw std::runtime_error("checkpoint: parameter count mismatch in " + path);
    f.read(reinterpret_cast<char*>(d.params_.data()),
           static_cast<std::streamsize>(count * sizeof(double)));
    if (!f) throw std::runtime_error("checkpoint: truncated file " + path);
    return d;
}

// ---- toy dataset ------------------------------------------------------------

// global color pool the procedural images draw from
inline const Palette& toy_palette() {
    static Palette p = parse_palette(
        "#e6194b,#3cb44b,#ffe119,#4363d8,#f58231,#911eb4,#46f0f0,#f5f5dc");
    return p;
}

// 1-3 flat geometric shapes from the global pool on a plain background.
// Label = shape count - 1.
inline RgbImage make_toy_image(Rng& rng, int size, int* label_out = nullptr) {
    const Palette& pool = toy_palette();
    RgbImage img(size, size);
    int bg = rng.uniform_int(static_cast<int>(pool.size()));
    for (size_t i = 0; i < img.pixel_count(); ++i)
        for (int c = 0; c < 3; ++c) img.pixels[3 * i + c] = pool.colors[bg][c];
    int n_shapes = 1 + rng.uniform_int(3);
    if (label_out) *label_out = n_shapes - 1;
    for (int s = 0; s < n_shapes; ++s) {
        int ci = rng.uniform_int(static_cast<int>(pool.size()));
        if (ci == bg) ci = (ci + 1) % static_cast<int>(pool.size());
        int kind = rng.uniform_int(3);
        double cx = (0.2 + 0.6 * rng.uniform()) * size;
        double cy = (0.2 + 0.6 * rng.uniform()) * size;
        double r = (0.1 + 0.15 * rng.uniform()) * size;
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                bool inside = false;
                if (kind == 0) inside = dx * dx + dy * dy < r * r;
                else if (kind == 1) inside = std::abs(dx) < r && std::abs(dy) < r;
                else inside = dy > -r && dy < r && std::abs(dx) < (dy + r) * 0.5;
                if (inside)
                    for (int c = 0; c < 3; ++c) img.at(y, x, c) = pool.colors[ci][c];
            }
    }
    return img;
}

// ---- training ---------------------------------------------------------------

struct TrainConfig {
    std::string dataset = "shapes";  // "shapes" | "single"
    int image_size = 32;
    int hidden = 16;
    int t_train = 1000;
    int steps = 3000;
    int batch = 8;
    double lr = 1e-3;
    double label_dropout = 0.1;
    uint64_t seed = 7;
};

struct TrainResult {
    ConvDenoiser model;
    NoiseSchedule schedule;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<std::pair<int, double>> loss_curve;  // (step, running loss)
};

inline TrainResult train_toy_denoiser(const TrainConfig& cfg) {
    if (cfg.steps < 1 || cfg.batch < 1) throw std::domain_error("train: bad budget");
    ConvDenoiserSpec spec;
    spec.image_size = cfg.image_size;
    spec.hidden = cfg.hidden;
    spec.t_train = cfg.t_train;
    TrainResult res;
    res.model = ConvDenoiser(spec, cfg.seed);
    res.schedule = make_schedule(cfg.t_train, ScheduleKind::Linear);

    Rng rng(cfg.seed * 0x9e3779b97f4a7c15ull + 1);
    RgbImage single;
    if (cfg.dataset == "single") {
        Rng img_rng(cfg.seed);
        single = make_toy_image(img_rng, cfg.image_size, nullptr);
    } else if (cfg.dataset != "shapes") {
        throw std::domain_error("train: unknown dataset \"" + cfg.dataset + "\"");
    }

    size_t np = res.model.parameter_count();
    std::vector<double> grad(np), m(np, 0.0), v(np, 0.0);
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double ema = -1.0;
    size_t numel = static_cast<size_t>(cfg.image_size) * cfg.image_size * 3;

    for (int step = 1; step <= cfg.steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double loss = 0.0;
        for (int bi = 0; bi < cfg.batch; ++bi) {
            int label = -1;
            RgbImage img = cfg.dataset == "single"
                               ? single
                               : make_toy_image(rng, cfg.image_size, &label);
            if (cfg.dataset == "single") label = 0;
            if (rng.uniform() < cfg.label_dropout) label = -1;
            ModelState x0 = encode_from_rgb(img);
            int t = 1 + rng.uniform_int(cfg.t_train);
            ModelState noise(numel);
            fill_normal(rng, noise);
            ModelState xt = forward_noise(x0, t, noise, res.schedule);
            ConvDenoiser::Cache cache;
            res.model.forward(xt, t, label, cache);
            ModelState cot(numel);
            double scale = 1.0 / (static_cast<double>(numel) * cfg.batch);
            for (size_t i = 0; i < numel; ++i) {
                double d = cache.out[i] - noise[i];
                loss += d * d * scale;
                cot[i] = 2.0 * d * scale;
            }
            res.model.backward(cache, cot, &grad);
        }
        ema = ema < 0.0 ? loss : 0.99 * ema + 0.01 * loss;
        if (step <= 20) res.initial_loss += loss / 20.0;
        if (step == std::max(50, cfg.steps / 5) && ema > 1.5 * res.initial_loss)
            throw std::runtime_error("train: divergence detected (running loss " +
                                     std::to_string(ema) + " > initial " +
                                     std::to_string(res.initial_loss) + " at step " +
                                     std::to_string(step) + ")");
        if (step % 50 == 0 || step == cfg.steps) res.loss_curve.emplace_back(step, ema);

        double bc1 = 1.0 - std::pow(b1, step), bc2 = 1.0 - std::pow(b2, step);
        std::vector<double>& p = res.model.parameters();
        for (size_t i = 0; i < np; ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            p[i] -= cfg.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
    }
    res.final_loss = res.loss_curve.empty() ? res.initial_loss : res.loss_curve.back().second;
    return res;
}

}  // namespace tintin
