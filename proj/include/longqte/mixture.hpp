#pragma once

// Conditional Gaussian mixture with affine parameter maps, fitted by EM
// with per-component weighted least squares in the M-step. Provides
// closed-form conditional CDF, density, and expected quantile loss —
// the outcome-distribution nuisances F_t, f_t and the per-(S,X) expected
// quantile loss.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "longqte/dataset.hpp"
#include "longqte/rng.hpp"

namespace longqte {

// One univariate Gaussian mixture component (weight may be negative when
// used as an aggregation term in the estimator).
struct GaussComp {
    double w;
    double mu;
    double sigma;
};

inline double mixture_cdf(const std::vector<GaussComp>& comps, double q) {
    double v = 0.0;
    for (const GaussComp& c : comps) v += c.w * normal_cdf((q - c.mu) / c.sigma);
    return v;
}

inline double mixture_pdf(const std::vector<GaussComp>& comps, double q) {
    double v = 0.0;
    for (const GaussComp& c : comps) {
        v += c.w * normal_pdf((q - c.mu) / c.sigma) / c.sigma;
    }
    return v;
}

// E[rho_tau(Y - q)] for mixture Y: per component
// tau*(mu - q) + (q - mu)*Phi(z) + sigma*phi(z), z = (q - mu)/sigma.
inline double mixture_qloss(const std::vector<GaussComp>& comps, double q,
                            double tau) {
    double v = 0.0;
    for (const GaussComp& c : comps) {
        const double z = (q - c.mu) / c.sigma;
        v += c.w * (tau * (c.mu - q) + (q - c.mu) * normal_cdf(z) +
                    c.sigma * normal_pdf(z));
    }
    return v;
}

struct MixtureConfig {
    int m_components = 1;
    int n_restarts = 3;
    int max_iter = 150;
    double rel_tol = 1e-8;
    double sd_floor_rel = 1e-3;  // floor = rel * response sample sd, per dim
    std::uint64_t seed = 0;
};

class ConditionalMixtureModel {
public:
    ConditionalMixtureModel() = default;

    int m_components() const { return m_; }
    std::size_t response_dim() const { return r_; }
    std::size_t cond_dim() const { return p_; }
    double sd_floor(std::size_t dim) const { return sd_floor_[dim]; }
    double log_likelihood() const { return loglik_; }

    // Parameter maps are affine in the conditioning vector; column 0 is
    // the intercept. Fitting only moves the weight/log-sd intercepts, but
    // evaluation honours the full affine structure.
    Eigen::MatrixXd weight_logits;             // m x (p+1)
    std::vector<Eigen::MatrixXd> mean_params;    // per comp: r x (p+1)
    std::vector<Eigen::MatrixXd> log_sd_params;  // per comp: r x (p+1)

    std::vector<double> weights_at(const std::vector<double>& cond) const {
        const Eigen::VectorXd z = design(cond);
        Eigen::VectorXd logits = weight_logits * z;
        const double mx = logits.maxCoeff();
        double denom = 0.0;
        std::vector<double> w(static_cast<std::size_t>(m_));
        for (int j = 0; j < m_; ++j) {
            w[static_cast<std::size_t>(j)] = std::exp(logits(j) - mx);
            denom += w[static_cast<std::size_t>(j)];
        }
        for (double& wj : w) wj /= denom;
        return w;
    }

    double mean_at(int comp, std::size_t dim, const std::vector<double>& cond) const {
        return (mean_params[static_cast<std::size_t>(comp)] * design(cond))(
            static_cast<Eigen::Index>(dim));
    }

    double sd_at(int comp, std::size_t dim, const std::vector<double>& cond) const {
        const double ls = (log_sd_params[static_cast<std::size_t>(comp)] *
                           design(cond))(static_cast<Eigen::Index>(dim));
        return std::max(sd_floor_[dim], std::exp(ls));
    }

    // Univariate component list at a conditioning point (response_dim 1).
    std::vector<GaussComp> components_at(const std::vector<double>& cond) const {
        if (r_ != 1) {
            throw ValidationError("components_at requires response_dim == 1");
        }
        const std::vector<double> w = weights_at(cond);
        std::vector<GaussComp> comps(static_cast<std::size_t>(m_));
        for (int j = 0; j < m_; ++j) {
            comps[static_cast<std::size_t>(j)] = {w[static_cast<std::size_t>(j)],
                                                  mean_at(j, 0, cond),
                                                  sd_at(j, 0, cond)};
        }
        return comps;
    }

    // Draw one response vector conditional on cond.
    std::vector<double> sample(const std::vector<double>& cond, SplitRng& rng) const {
        const std::vector<double> w = weights_at(cond);
        const double u = rng.uniform();
        int comp = m_ - 1;
        double acc = 0.0;
        for (int j = 0; j < m_; ++j) {
            acc += w[static_cast<std::size_t>(j)];
            if (u < acc) { comp = j; break; }
        }
        std::vector<double> out(r_);
        for (std::size_t d = 0; d < r_; ++d) {
            out[d] = mean_at(comp, d, cond) + sd_at(comp, d, cond) * rng.normal();
        }
        return out;
    }

    friend ConditionalMixtureModel fit_mixture(
        const std::vector<std::vector<double>>& conditioning,
        const std::vector<std::vector<double>>& response,
        const MixtureConfig& config);

    // Rebuild a model from explicit parameters (deserialization, analytic
    // nuisances in tests).
    static ConditionalMixtureModel from_parameters(
        int m, std::size_t response_dim, std::size_t cond_dim,
        std::vector<double> sd_floor, Eigen::MatrixXd weight_logits,
        std::vector<Eigen::MatrixXd> mean_params,
        std::vector<Eigen::MatrixXd> log_sd_params) {
        ConditionalMixtureModel model;
        model.m_ = m;
        model.r_ = response_dim;
        model.p_ = cond_dim;
        model.sd_floor_ = std::move(sd_floor);
        model.weight_logits = std::move(weight_logits);
        model.mean_params = std::move(mean_params);
        model.log_sd_params = std::move(log_sd_params);
        return model;
    }

private:
    Eigen::VectorXd design(const std::vector<double>& cond) const {
        if (cond.size() != p_) {
            throw ValidationError("mixture eval: conditioning dimension mismatch");
        }
        Eigen::VectorXd z(static_cast<Eigen::Index>(p_) + 1);
        z(0) = 1.0;
        for (std::size_t i = 0; i < p_; ++i) {
            z(static_cast<Eigen::Index>(i) + 1) = cond[i];
        }
        return z;
    }

    int m_ = 0;
    std::size_t r_ = 0;
    std::size_t p_ = 0;
    std::vector<double> sd_floor_;
    double loglik_ = -std::numeric_limits<double>::infinity();
};

inline double eval_cdf(const ConditionalMixtureModel& model,
                       const std::vector<double>& cond, double q) {
    return mixture_cdf(model.components_at(cond), q);
}

inline double eval_pdf(const ConditionalMixtureModel& model,
                       const std::vector<double>& cond, double q) {
    return mixture_pdf(model.components_at(cond), q);
}

inline double eval_expected_qloss(const ConditionalMixtureModel& model,
                                  const std::vector<double>& cond, double q,
                                  QuantileLevel tau) {
    return mixture_qloss(model.components_at(cond), q, tau.tau);
}

namespace detail {

struct EmState {
    Eigen::MatrixXd weight_logits;             // m x (p+1), intercept only fitted
    std::vector<Eigen::MatrixXd> mean_params;    // r x (p+1)
    std::vector<Eigen::VectorXd> log_sd;         // r (intercepts)
    double loglik = -std::numeric_limits<double>::infinity();
};

}  // namespace detail

inline ConditionalMixtureModel fit_mixture(
    const std::vector<std::vector<double>>& conditioning,
    const std::vector<std::vector<double>>& response,
    const MixtureConfig& config) {
    const std::size_t n = conditioning.size();
    const int m = config.m_components;
    if (m < 1) throw ValidationError("fit_mixture: m_components must be >= 1");
    if (n != response.size() || n == 0) {
        throw ValidationError("fit_mixture: conditioning/response size mismatch");
    }
    if (n < static_cast<std::size_t>(10 * m)) {
        throw ValidationError("fit_mixture: need at least 10*m_components rows");
    }
    const std::size_t p = conditioning[0].size();
    const std::size_t r = response[0].size();
    const Eigen::Index pe = static_cast<Eigen::Index>(p) + 1;

    Eigen::MatrixXd A(n, pe);
    Eigen::MatrixXd Y(n, static_cast<Eigen::Index>(r));
    for (std::size_t i = 0; i < n; ++i) {
        if (conditioning[i].size() != p || response[i].size() != r) {
            throw ValidationError("fit_mixture: ragged input");
        }
        A(static_cast<Eigen::Index>(i), 0) = 1.0;
        for (std::size_t j = 0; j < p; ++j) {
            const double v = conditioning[i][j];
            if (!std::isfinite(v)) throw ValidationError("fit_mixture: non-finite input");
            A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j) + 1) = v;
        }
        for (std::size_t d = 0; d < r; ++d) {
            const double v = response[i][d];
            if (!std::isfinite(v)) throw ValidationError("fit_mixture: non-finite input");
            Y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = v;
        }
    }

    // Per-dimension sd floor from the response sample sd.
    std::vector<double> sd_floor(r);
    for (std::size_t d = 0; d < r; ++d) {
        const Eigen::Index di = static_cast<Eigen::Index>(d);
        const double mean = Y.col(di).mean();
        const double var = (Y.col(di).array() - mean).square().sum() /
                           static_cast<double>(n);
        sd_floor[d] = std::max(config.sd_floor_rel * std::sqrt(var), 1e-12);
    }

    // Shared global least-squares fit used to seed every restart.
    Eigen::MatrixXd AtA = A.transpose() * A;
    AtA.diagonal().array() += 1e-8;
    const Eigen::MatrixXd global_coef =
        AtA.ldlt().solve(A.transpose() * Y).transpose();  // r x (p+1)
    Eigen::MatrixXd resid = Y - A * global_coef.transpose();
    std::vector<double> resid_sd(r);
    for (std::size_t d = 0; d < r; ++d) {
        const Eigen::Index di = static_cast<Eigen::Index>(d);
        resid_sd[d] = std::max(
            std::sqrt(resid.col(di).squaredNorm() / static_cast<double>(n)),
            sd_floor[d]);
    }

    const double log2pi = 1.8378770664093454836;
    auto run_em = [&](int restart) {
        detail::EmState st;
        SplitRng rng(config.seed, 0x3131EULL, static_cast<std::uint64_t>(restart));
        st.weight_logits = Eigen::MatrixXd::Zero(m, pe);
        st.mean_params.assign(static_cast<std::size_t>(m), global_coef);
        st.log_sd.assign(static_cast<std::size_t>(m),
                         Eigen::VectorXd::Zero(static_cast<Eigen::Index>(r)));
        for (int j = 0; j < m; ++j) {
            // Spread component intercepts over residual quantile offsets;
            // restarts beyond the first add random jitter.
            const double off =
                m > 1 ? inverse_normal_cdf((j + 0.5) / static_cast<double>(m)) : 0.0;
            for (std::size_t d = 0; d < r; ++d) {
                const Eigen::Index di = static_cast<Eigen::Index>(d);
                double jitter = restart == 0 ? 0.0 : 0.5 * rng.normal();
                st.mean_params[static_cast<std::size_t>(j)](di, 0) +=
                    (off + jitter) * resid_sd[d];
                st.log_sd[static_cast<std::size_t>(j)](di) =
                    std::log(std::max(resid_sd[d] * (m > 1 ? 0.7 : 1.0), sd_floor[d]));
            }
        }

        Eigen::MatrixXd logdens(n, m);
        Eigen::MatrixXd resp(n, m);
        double prev_ll = -std::numeric_limits<double>::infinity();
        for (int it = 0; it < config.max_iter; ++it) {
            // E-step.
            Eigen::VectorXd logw = st.weight_logits.col(0);
            const double mx0 = logw.maxCoeff();
            double denom0 = 0.0;
            for (int j = 0; j < m; ++j) denom0 += std::exp(logw(j) - mx0);
            for (int j = 0; j < m; ++j) logw(j) -= mx0 + std::log(denom0);
            for (int j = 0; j < m; ++j) {
                Eigen::MatrixXd mu =
                    A * st.mean_params[static_cast<std::size_t>(j)].transpose();
                Eigen::VectorXd col = Eigen::VectorXd::Constant(n, logw(j));
                for (std::size_t d = 0; d < r; ++d) {
                    const Eigen::Index di = static_cast<Eigen::Index>(d);
                    const double sd = std::max(
                        std::exp(st.log_sd[static_cast<std::size_t>(j)](di)),
                        sd_floor[d]);
                    col.array() += -0.5 * log2pi - std::log(sd) -
                                   0.5 * ((Y.col(di) - mu.col(di)).array() / sd).square();
                }
                logdens.col(j) = col;
            }
            double ll = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const Eigen::Index ii = static_cast<Eigen::Index>(i);
                const double mx = logdens.row(ii).maxCoeff();
                double sum = 0.0;
                for (int j = 0; j < m; ++j) sum += std::exp(logdens(ii, j) - mx);
                ll += mx + std::log(sum);
                for (int j = 0; j < m; ++j) {
                    resp(ii, j) = std::exp(logdens(ii, j) - mx) / sum;
                }
            }
            st.loglik = ll;
            if (std::fabs(ll - prev_ll) <= config.rel_tol * (std::fabs(ll) + 1.0)) break;
            prev_ll = ll;

            // M-step.
            for (int j = 0; j < m; ++j) {
                const Eigen::VectorXd w = resp.col(j);
                const double wsum = std::max(w.sum(), 1e-12);
                st.weight_logits(j, 0) = std::log(wsum / static_cast<double>(n));
                Eigen::MatrixXd AtWA = A.transpose() * w.asDiagonal() * A;
                AtWA.diagonal().array() += 1e-8;
                const auto solver = AtWA.ldlt();
                Eigen::MatrixXd coef =
                    solver.solve(A.transpose() * w.asDiagonal() * Y).transpose();
                st.mean_params[static_cast<std::size_t>(j)] = coef;
                Eigen::MatrixXd mu = A * coef.transpose();
                for (std::size_t d = 0; d < r; ++d) {
                    const Eigen::Index di = static_cast<Eigen::Index>(d);
                    const double mse =
                        (w.array() * (Y.col(di) - mu.col(di)).array().square()).sum() /
                        wsum;
                    st.log_sd[static_cast<std::size_t>(j)](di) =
                        std::log(std::max(std::sqrt(mse), sd_floor[d]));
                }
            }
        }
        return st;
    };

    detail::EmState best;
    for (int restart = 0; restart < std::max(1, config.n_restarts); ++restart) {
        detail::EmState st = run_em(restart);
        if (st.loglik > best.loglik) best = std::move(st);
    }

    ConditionalMixtureModel model;
    model.m_ = m;
    model.r_ = r;
    model.p_ = p;
    model.sd_floor_ = sd_floor;
    model.loglik_ = best.loglik;
    model.weight_logits = best.weight_logits;
    model.mean_params = best.mean_params;
    model.log_sd_params.assign(static_cast<std::size_t>(m),
                               Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(r), pe));
    for (int j = 0; j < m; ++j) {
        model.log_sd_params[static_cast<std::size_t>(j)].col(0) =
            best.log_sd[static_cast<std::size_t>(j)];
    }
    return model;
}

}  // namespace longqte
