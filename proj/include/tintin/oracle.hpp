#pragma once

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tintin/denoiser.hpp"
#include "tintin/diffusion.hpp"
#include "tintin/guidance.hpp"
#include "tintin/image.hpp"

// Analytic verification harness: diffusion over a Gaussian mixture, where the
// noised score, the optimal epsilon, and the linearly conditioned posterior
// all have closed forms. Dimensions stay tiny (d <= 4), so the matrix algebra
// is hand-rolled.

namespace tintin {
namespace oracle {

// row-major d x d
using Mat = std::vector<double>;
using Vec = std::vector<double>;

inline Mat identity(int d) {
    Mat m(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i) m[i * d + i] = 1.0;
    return m;
}

// Cholesky factor L (lower) of an SPD matrix; throws if not positive-definite.
inline Mat cholesky(const Mat& a, int d) {
    Mat L(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = a[i * d + j];
            for (int k = 0; k < j; ++k) s -= L[i * d + k] * L[j * d + k];
            if (i == j) {
                if (s <= 0.0) throw std::domain_error("cholesky: matrix not positive-definite");
                L[i * d + i] = std::sqrt(s);
            } else {
                L[i * d + j] = s / L[j * d + j];
            }
        }
    }
    return L;
}

inline Vec chol_solve(const Mat& L, int d, const Vec& b) {
    Vec y(d), x(d);
    for (int i = 0; i < d; ++i) {
        double s = b[i];
        for (int k = 0; k < i; ++k) s -= L[i * d + k] * y[k];
        y[i] = s / L[i * d + i];
    }
    for (int i = d - 1; i >= 0; --i) {
        double s = y[i];
        for (int k = i + 1; k < d; ++k) s -= L[k * d + i] * x[k];
        x[i] = s / L[i * d + i];
    }
    return x;
}

inline double chol_logdet(const Mat& L, int d) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += std::log(L[i * d + i]);
    return 2.0 * s;
}

inline Mat inverse_spd(const Mat& a, int d) {
    Mat L = cholesky(a, d);
    Mat inv(static_cast<size_t>(d) * d);
    for (int j = 0; j < d; ++j) {
        Vec e(d, 0.0);
        e[j] = 1.0;
        Vec col = chol_solve(L, d, e);
        for (int i = 0; i < d; ++i) inv[i * d + j] = col[i];
    }
    return inv;
}

inline Vec matvec(const Mat& m, int rows, int cols, const Vec& v) {
    Vec out(rows, 0.0);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) out[i] += m[i * cols + j] * v[j];
    return out;
}

struct GmmSpec {
    std::vector<double> weights;
    std::vector<Vec> means;
    std::vector<Mat> covariances;

    int dim() const { return means.empty() ? 0 : static_cast<int>(means[0].size()); }
    size_t components() const { return weights.size(); }

    void validate() const {
        if (weights.empty() || weights.size() != means.size() ||
            weights.size() != covariances.size())
            throw std::domain_error("GmmSpec: inconsistent component counts");
        double sum = 0.0;
        for (double w : weights) sum += w;
        if (std::abs(sum - 1.0) > 1e-9) throw std::domain_error("GmmSpec: weights must sum to 1");
        int d = dim();
        for (const auto& c : covariances) cholesky(c, d);  // SPD check
    }

    Vec mixture_mean() const {
        int d = dim();
        Vec mu(d, 0.0);
        for (size_t k = 0; k < components(); ++k)
            for (int i = 0; i < d; ++i) mu[i] += weights[k] * means[k][i];
        return mu;
    }

    Mat mixture_cov() const {
        int d = dim();
        Vec mu = mixture_mean();
        Mat cov(static_cast<size_t>(d) * d, 0.0);
        for (size_t k = 0; k < components(); ++k)
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j)
                    cov[i * d + j] += weights[k] * (covariances[k][i * d + j] +
                                                    means[k][i] * means[k][j]);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) cov[i * d + j] -= mu[i] * mu[j];
        return cov;
    }
};

// quadratic alignment energy ||A x0 - y||^2 / (2 sigma^2)
struct LinearCondition {
    Mat A;  // m x d
    Vec y;  // m
    double sigma = 1.0;
    int obs_dim = 1;

    void validate(int d) const {
        if (sigma <= 0.0) throw std::domain_error("LinearCondition: sigma must be > 0");
        if (static_cast<int>(A.size()) != obs_dim * d || static_cast<int>(y.size()) != obs_dim)
            throw std::domain_error("LinearCondition: shape mismatch");
    }
};

struct ScoreResult {
    Vec score;
    Vec eps_star;  // -sqrt(1 - abar_t) * score
};

// Exact score of the noised mixture: each component becomes
// N(sqrt(abar) mu_k, abar Sigma_k + (1-abar) I).
inline ScoreResult gmm_score(const GmmSpec& spec, const Vec& x, int t, const NoiseSchedule& sched) {
    int d = spec.dim();
    double ab = sched.alpha_bar(t);
    size_t K = spec.components();
    std::vector<double> logw(K);
    std::vector<Vec> gk(K);
    double maxlog = -1e300;
    for (size_t k = 0; k < K; ++k) {
        Mat C(static_cast<size_t>(d) * d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                C[i * d + j] = ab * spec.covariances[k][i * d + j] + (i == j ? 1.0 - ab : 0.0);
        Mat L = cholesky(C, d);
        Vec diff(d);
        for (int i = 0; i < d; ++i) diff[i] = x[i] - std::sqrt(ab) * spec.means[k][i];
        Vec pd = chol_solve(L, d, diff);  // P_k (x - m_k)
        double quad = 0.0;
        for (int i = 0; i < d; ++i) quad += diff[i] * pd[i];
        logw[k] = std::log(spec.weights[k]) - 0.5 * (chol_logdet(L, d) + quad);
        maxlog = std::max(maxlog, logw[k]);
        gk[k].resize(d);
        for (int i = 0; i < d; ++i) gk[k][i] = -pd[i];
    }
    double z = 0.0;
    for (size_t k = 0; k < K; ++k) z += std::exp(logw[k] - maxlog);
    ScoreResult res;
    res.score.assign(d, 0.0);
    for (size_t k = 0; k < K; ++k) {
        double r = std::exp(logw[k] - maxlog) / z;
        for (int i = 0; i < d; ++i) res.score[i] += r * gk[k][i];
    }
    res.eps_star.resize(d);
    double s = std::sqrt(1.0 - ab);
    for (int i = 0; i < d; ++i) res.eps_star[i] = -s * res.score[i];
    return res;
}

// Hessian of log p_t(x): sum_k r_k (g_k g_k^T - P_k) - score score^T
inline Mat gmm_score_jacobian(const GmmSpec& spec, const Vec& x, int t,
                              const NoiseSchedule& sched) {
    int d = spec.dim();
    double ab = sched.alpha_bar(t);
    size_t K = spec.components();
    std::vector<double> logw(K);
    std::vector<Vec> gk(K);
    std::vector<Mat> Pk(K);
    double maxlog = -1e300;
    for (size_t k = 0; k < K; ++k) {
        Mat C(static_cast<size_t>(d) * d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                C[i * d + j] = ab * spec.covariances[k][i * d + j] + (i == j ? 1.0 - ab : 0.0);
        Mat L = cholesky(C, d);
        Pk[k] = inverse_spd(C, d);
        Vec diff(d);
        for (int i = 0; i < d; ++i) diff[i] = x[i] - std::sqrt(ab) * spec.means[k][i];
        Vec pd = chol_solve(L, d, diff);
        double quad = 0.0;
        for (int i = 0; i < d; ++i) quad += diff[i] * pd[i];
        logw[k] = std::log(spec.weights[k]) - 0.5 * (chol_logdet(L, d) + quad);
        maxlog = std::max(maxlog, logw[k]);
        gk[k].resize(d);
        for (int i = 0; i < d; ++i) gk[k][i] = -pd[i];
    }
    double z = 0.0;
    for (size_t k = 0; k < K; ++k) z += std::exp(logw[k] - maxlog);
    Vec score(d, 0.0);
    Mat H(static_cast<size_t>(d) * d, 0.0);
    for (size_t k = 0; k < K; ++k) {
        double r = std::exp(logw[k] - maxlog) / z;
        for (int i = 0; i < d; ++i) {
            score[i] += r * gk[k][i];
            for (int j = 0; j < d; ++j)
                H[i * d + j] += r * (gk[k][i] * gk[k][j] - Pk[k][i * d + j]);
        }
    }
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) H[i * d + j] -= score[i] * score[j];
    return H;
}

// Denoiser backed by the exact noised-mixture score. Isolates guidance-math
// errors from learning errors.
class ExactEpsDenoiser : public Denoiser {
  public:
    ExactEpsDenoiser(GmmSpec spec, const NoiseSchedule& sched)
        : spec_(std::move(spec)), sched_(&sched) {
        spec_.validate();
    }

    ModelState predict(const ModelState& x, int t, int) const override {
        return gmm_score(spec_, x, t, *sched_).eps_star;
    }

    bool supports_input_grad() const override { return true; }

    ModelState input_vjp(const ModelState& x, int t, int,
                         const ModelState& cot) const override {
        int d = spec_.dim();
        Mat H = gmm_score_jacobian(spec_, x, t, *sched_);
        double s = -std::sqrt(1.0 - sched_->alpha_bar(t));
        Vec out = matvec(H, d, d, cot);  // H symmetric
        for (double& v : out) v *= s;
        return out;
    }

  private:
    GmmSpec spec_;
    const NoiseSchedule* sched_;
};

// Conjugate Gaussian update per component, weights rescaled by the marginal
// likelihood of y.
inline GmmSpec exact_conditional_posterior(const GmmSpec& spec, const LinearCondition& cond) {
    spec.validate();
    int d = spec.dim();
    int m = cond.obs_dim;
    cond.validate(d);
    GmmSpec post;
    std::vector<double> logw(spec.components());
    double maxlog = -1e300;
    for (size_t k = 0; k < spec.components(); ++k) {
        Mat prior_prec = inverse_spd(spec.covariances[k], d);
        // posterior precision and mean
        Mat prec = prior_prec;
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                double s = 0.0;
                for (int r = 0; r < m; ++r) s += cond.A[r * d + i] * cond.A[r * d + j];
                prec[i * d + j] += s / (cond.sigma * cond.sigma);
            }
        Mat cov = inverse_spd(prec, d);
        Vec rhs = matvec(prior_prec, d, d, spec.means[k]);
        for (int i = 0; i < d; ++i) {
            double s = 0.0;
            for (int r = 0; r < m; ++r) s += cond.A[r * d + i] * cond.y[r];
            rhs[i] += s / (cond.sigma * cond.sigma);
        }
        Vec mean = matvec(cov, d, d, rhs);
        post.means.push_back(mean);
        post.covariances.push_back(cov);
        // marginal likelihood N(y; A mu_k, A Sigma_k A^T + sigma^2 I)
        Mat S(static_cast<size_t>(m) * m, 0.0);
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < m; ++c) {
                double s = 0.0;
                for (int i = 0; i < d; ++i)
                    for (int j = 0; j < d; ++j)
                        s += cond.A[r * d + i] * spec.covariances[k][i * d + j] * cond.A[c * d + j];
                S[r * m + c] = s + (r == c ? cond.sigma * cond.sigma : 0.0);
            }
        Mat L = cholesky(S, m);
        Vec diff(m);
        Vec amu = matvec(cond.A, m, d, spec.means[k]);
        for (int r = 0; r < m; ++r) diff[r] = cond.y[r] - amu[r];
        Vec sd = chol_solve(L, m, diff);
        double quad = 0.0;
        for (int r = 0; r < m; ++r) quad += diff[r] * sd[r];
        logw[k] = std::log(spec.weights[k]) - 0.5 * (chol_logdet(L, m) + quad);
        maxlog = std::max(maxlog, logw[k]);
    }
    double z = 0.0;
    for (double lw : logw) z += std::exp(lw - maxlog);
    for (double lw : logw) post.weights.push_back(std::exp(lw - maxlog) / z);
    return post;
}

struct OracleReport {
    Vec empirical_mean;
    Mat empirical_cov;
    Vec exact_mean;
    Mat exact_cov;
    double mean_abs_err = 0.0;
    double cov_abs_err = 0.0;
    double mean_se = 0.0;  // standard error of the empirical mean, max over dims

    std::string to_text() const {
        std::ostringstream os;
        os << "expected mean:";
        for (double v : exact_mean) os << ' ' << v;
        os << "\nempirical mean:";
        for (double v : empirical_mean) os << ' ' << v;
        os << "\nexpected cov:";
        for (double v : exact_cov) os << ' ' << v;
        os << "\nempirical cov:";
        for (double v : empirical_cov) os << ' ' << v;
        os << "\nmean_abs_err: " << mean_abs_err << "\ncov_abs_err: " << cov_abs_err
           << "\nmean_se: " << mean_se << '\n';
        return os.str();
    }
};

inline ConditionFn make_linear_condition(const LinearCondition& cond, int d) {
    LinearCondition c = cond;
    return [c, d](const ModelState& x0) {
        int m = c.obs_dim;
        Vec resid = matvec(c.A, m, d, x0);
        for (int r = 0; r < m; ++r) resid[r] -= c.y[r];
        LossResult res;
        double s2 = c.sigma * c.sigma;
        for (int r = 0; r < m; ++r) res.value += resid[r] * resid[r] / (2.0 * s2);
        res.grad.assign(d, 0.0);
        for (int i = 0; i < d; ++i)
            for (int r = 0; r < m; ++r) res.grad[i] += c.A[r * d + i] * resid[r] / s2;
        return res;
    };
}

// Guided sampling with the exact-eps denoiser against the conjugate posterior.
inline OracleReport run_guided_oracle(const GmmSpec& spec, const LinearCondition& cond,
                                      const NoiseSchedule& sched, const GuidanceConfig& cfg,
                                      int n_samples, uint64_t seed) {
    spec.validate();
    int d = spec.dim();
    cond.validate(d);
    if (n_samples < 1) throw std::domain_error("run_guided_oracle: n_samples must be >= 1");
    ExactEpsDenoiser den(spec, sched);
    ConditionFn cfn = cfg.step_scale > 0.0 ? make_linear_condition(cond, d) : ConditionFn{};

    std::vector<std::vector<double>> samples(d, std::vector<double>(n_samples));
    for (int i = 0; i < n_samples; ++i) {
        SampleResult r = guided_sample(den, sched, cfg, cfn, seed + static_cast<uint64_t>(i), -1,
                                       static_cast<size_t>(d));
        for (int j = 0; j < d; ++j) samples[j][static_cast<size_t>(i)] = r.x0[j];
    }

    OracleReport rep;
    rep.empirical_mean.resize(d);
    for (int j = 0; j < d; ++j)
        rep.empirical_mean[j] = pairwise_sum(samples[j]) / n_samples;
    rep.empirical_cov.assign(static_cast<size_t>(d) * d, 0.0);
    std::vector<double> prod(n_samples);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            for (int s = 0; s < n_samples; ++s)
                prod[s] = (samples[i][s] - rep.empirical_mean[i]) *
                          (samples[j][s] - rep.empirical_mean[j]);
            rep.empirical_cov[i * d + j] = pairwise_sum(prod) / (n_samples - 1);
        }

    GmmSpec post = exact_conditional_posterior(spec, cond);
    rep.exact_mean = post.mixture_mean();
    rep.exact_cov = post.mixture_cov();
    for (int j = 0; j < d; ++j) {
        rep.mean_abs_err = std::max(rep.mean_abs_err,
                                    std::abs(rep.empirical_mean[j] - rep.exact_mean[j]));
        rep.mean_se = std::max(rep.mean_se,
                               std::sqrt(rep.empirical_cov[j * d + j] / n_samples));
    }
    for (size_t i = 0; i < rep.exact_cov.size(); ++i)
        rep.cov_abs_err = std::max(rep.cov_abs_err,
                                   std::abs(rep.empirical_cov[i] - rep.exact_cov[i]));
    return rep;
}

}  // namespace oracle
}  // namespace tintin
