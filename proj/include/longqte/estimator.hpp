#pragma once

// Cross-fitted doubly robust objective/moment and the quantile solver.
//
// The empirical objective is a weighted sum of per-unit expected quantile
// losses, each a Gaussian mixture in closed form, plus observed-outcome
// check losses. All terms are aggregated once per context into
// sigma-grouped component lists with sorted means and prefix sums, so a
// single objective or moment evaluation costs O(active components) where
// "active" means |q - mu| <= 9 sigma; components outside that window
// contribute exactly linear terms read off the prefix sums.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "longqte/dataset.hpp"
#include "longqte/nuisance.hpp"

namespace longqte {

// Per-unit nuisance evaluations, one treatment arm relevant per unit for
// the own-outcome terms (the other arm's indicator is zero).
struct UnitNuisance {
    double e = 0.5;                // clipped propensity at x
    double alpha = 0.0;            // g=0 units: alpha_{T_i}(S,X)
    std::vector<GaussComp> own;    // F_{T_i}(. | S,X) components
};

// Supplier of transported component lists (the equal-weight mixture over
// surrogate draws at a unit's x). Called only for g=1 units.
using TransportProvider =
    std::function<std::vector<GaussComp>(std::size_t unit, int t)>;

class MomentContext {
public:
    // Cross-fitted construction: each unit is evaluated with the bundle
    // of its own fold, whose training excluded that fold.
    MomentContext(const Dataset& data, FoldPlan plan,
                  std::vector<NuisanceBundle> bundles)
        : data_(&data), plan_(std::move(plan)), bundles_(std::move(bundles)) {
        if (bundles_.size() != static_cast<std::size_t>(plan_.k)) {
            throw ValidationError("MomentContext: one bundle per fold required");
        }
        nu_hat_ = data.nu_hat();
        // Definition-1 weighting: (1/K) * (1/|I_k|) per unit.
        std::vector<double> fold_size(static_cast<std::size_t>(plan_.k), 0.0);
        for (int a : plan_.assignment) fold_size[static_cast<std::size_t>(a)] += 1.0;
        weights_.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) {
            weights_[i] = 1.0 / (static_cast<double>(plan_.k) *
                                 fold_size[static_cast<std::size_t>(plan_.assignment[i])]);
        }
        nui_.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) {
            const Unit& u = data.unit(i);
            const NuisanceBundle& b = bundle_for(i);
            UnitNuisance& nu = nui_[i];
            nu.e = b.e_at(u.x);
            nu.own = b.own_components(u.t, u.s, u.x);
            if (u.g == 0) nu.alpha = b.alpha_at(u.t, u.s, u.x);
        }
        transport_ = [this](std::size_t i, int t) {
            return bundle_for(i).transported_components(
                t, data_->unit(i).x, static_cast<std::uint64_t>(i));
        };
        finalize();
    }

    // Direct construction from externally supplied nuisances (analytic
    // injection, oracle tests). Weights default to 1/N.
    MomentContext(const Dataset& data, std::vector<UnitNuisance> nuisances,
                  TransportProvider transport, double nu_hat_override = -1.0)
        : data_(&data), nui_(std::move(nuisances)), transport_(std::move(transport)) {
        if (nui_.size() != data.size()) {
            throw ValidationError("MomentContext: one nuisance record per unit");
        }
        nu_hat_ = nu_hat_override > 0.0 ? nu_hat_override : data.nu_hat();
        weights_.assign(data.size(), 1.0 / static_cast<double>(data.size()));
        finalize();
    }

    const Dataset& dataset() const { return *data_; }
    const FoldPlan& plan() const { return plan_; }
    const std::vector<NuisanceBundle>& bundles() const { return bundles_; }
    const std::vector<UnitNuisance>& nuisances() const { return nui_; }
    double nu_hat() const { return nu_hat_; }
    double bracket_lo() const { return lo_; }
    double bracket_hi() const { return hi_; }

    const NuisanceBundle& bundle_for(std::size_t unit) const {
        return bundles_[static_cast<std::size_t>(plan_.assignment[unit])];
    }

    std::vector<GaussComp> transported(std::size_t unit, int t) const {
        return transport_(unit, t);
    }

    // Empirical mean of Psi_t(W; q) over all units and folds.
    double objective(int t, double q, double tau) const {
        double v = 0.0;
        for (const Bucket& b : buckets_[t]) v += b.loss(q, tau);
        v += steps_[t].loss(q, tau);
        return v;
    }

    // Empirical mean of psi_t(W; q): the derivative of objective in q.
    double moment(int t, double q, double tau) const {
        double v = 0.0;
        for (const Bucket& b : buckets_[t]) v += b.deriv(q, tau);
        v += steps_[t].deriv(q, tau);
        return v;
    }

    // Per-unit psi_t value at q (used by the influence-function module).
    double psi_unit(std::size_t i, int t, double q, double tau) const {
        const Unit& u = data_->unit(i);
        const UnitNuisance& nu = nui_[i];
        const int ind = (u.t == t) ? 1 : 0;
        if (u.g == 1) {
            const double et = (t == 1) ? nu.e : (1.0 - nu.e);
            const double m = mixture_cdf(transport_(i, t), q);
            double v = m - tau;
            if (ind) v += (mixture_cdf(nu.own, q) - m) / et;
            return v / nu_hat_;
        }
        if (!ind) return 0.0;
        const double indicator = (*u.y <= q) ? 1.0 : 0.0;
        return nu.alpha * (indicator - mixture_cdf(nu.own, q)) / nu_hat_;
    }

private:
    struct Bucket {
        double sigma = 1.0;
        std::vector<double> mu;      // sorted
        std::vector<double> w;
        std::vector<double> pre_w;   // prefix sums, pre_w[i] = sum w[0..i)
        std::vector<double> pre_wmu;

        double loss(double q, double tau) const {
            const double cut = 9.0 * sigma;
            const std::size_t lo = static_cast<std::size_t>(
                std::lower_bound(mu.begin(), mu.end(), q - cut) - mu.begin());
            const std::size_t hi = static_cast<std::size_t>(
                std::upper_bound(mu.begin(), mu.end(), q + cut) - mu.begin());
            const std::size_t n = mu.size();
            // mu < q - cut: z >> 0, loss -> (1-tau)(q - mu).
            double v = (1.0 - tau) * (q * pre_w[lo] - pre_wmu[lo]);
            // mu > q + cut: z << 0, loss -> tau(mu - q).
            v += tau * ((pre_wmu[n] - pre_wmu[hi]) - q * (pre_w[n] - pre_w[hi]));
            for (std::size_t i = lo; i < hi; ++i) {
                const double z = (q - mu[i]) / sigma;
                v += w[i] * (tau * (mu[i] - q) + (q - mu[i]) * normal_cdf(z) +
                             sigma * normal_pdf(z));
            }
            return v;
        }

        double deriv(double q, double tau) const {
            const double cut = 9.0 * sigma;
            const std::size_t lo = static_cast<std::size_t>(
                std::lower_bound(mu.begin(), mu.end(), q - cut) - mu.begin());
            const std::size_t hi = static_cast<std::size_t>(
                std::upper_bound(mu.begin(), mu.end(), q + cut) - mu.begin());
            const std::size_t n = mu.size();
            double v = (1.0 - tau) * pre_w[lo] - tau * (pre_w[n] - pre_w[hi]);
            for (std::size_t i = lo; i < hi; ++i) {
                v += w[i] * (normal_cdf((q - mu[i]) / sigma) - tau);
            }
            return v;
        }
    };

    struct Steps {
        std::vector<double> y;  // sorted kinks from observed outcomes
        std::vector<double> w;
        std::vector<double> pre_w;
        std::vector<double> pre_wy;

        double loss(double q, double tau) const {
            const std::size_t k = static_cast<std::size_t>(
                std::upper_bound(y.begin(), y.end(), q) - y.begin());
            const std::size_t n = y.size();
            return (1.0 - tau) * (q * pre_w[k] - pre_wy[k]) +
                   tau * ((pre_wy[n] - pre_wy[k]) - q * (pre_w[n] - pre_w[k]));
        }

        double deriv(double q, double tau) const {
            const std::size_t k = static_cast<std::size_t>(
                std::upper_bound(y.begin(), y.end(), q) - y.begin());
            const std::size_t n = y.size();
            return pre_w[k] - tau * pre_w[n];
        }
    };

    void finalize() {
        double ymin = 0.0, ymax = 0.0;
        bool first = true;
        for (const Unit& u : data_->units()) {
            if (!u.y) continue;
            ymin = first ? *u.y : std::min(ymin, *u.y);
            ymax = first ? *u.y : std::max(ymax, *u.y);
            first = false;
        }
        const double range = std::max(ymax - ymin, 1e-12);
        lo_ = ymin - 0.1 * range;
        hi_ = ymax + 0.1 * range;

        for (int t = 0; t < 2; ++t) {
            std::map<double, std::vector<std::pair<double, double>>> grouped;
            std::vector<std::pair<double, double>> kinks;
            auto add = [&](const std::vector<GaussComp>& comps, double coef) {
                for (const GaussComp& c : comps) {
                    grouped[c.sigma].emplace_back(c.mu, coef * c.w);
                }
            };
            for (std::size_t i = 0; i < data_->size(); ++i) {
                const Unit& u = data_->unit(i);
                const UnitNuisance& nu = nui_[i];
                const double wi = weights_[i] / nu_hat_;
                const int ind = (u.t == t) ? 1 : 0;
                if (u.g == 1) {
                    const double et = (t == 1) ? nu.e : (1.0 - nu.e);
                    add(transport_(i, t), wi * (1.0 - ind / et));
                    if (ind) add(nu.own, wi / et);
                } else if (ind) {
                    add(nu.own, -wi * nu.alpha);
                    kinks.emplace_back(*u.y, wi * nu.alpha);
                }
            }
            buckets_[t].clear();
            for (auto& [sigma, items] : grouped) {
                std::sort(items.begin(), items.end());
                Bucket b;
                b.sigma = sigma;
                b.mu.reserve(items.size());
                b.w.reserve(items.size());
                b.pre_w.assign(1, 0.0);
                b.pre_wmu.assign(1, 0.0);
                for (const auto& [mu, w] : items) {
                    b.mu.push_back(mu);
                    b.w.push_back(w);
                    b.pre_w.push_back(b.pre_w.back() + w);
                    b.pre_wmu.push_back(b.pre_wmu.back() + w * mu);
                }
                buckets_[t].push_back(std::move(b));
            }
            std::sort(kinks.begin(), kinks.end());
            Steps& st = steps_[t];
            st = Steps{};
            st.pre_w.assign(1, 0.0);
            st.pre_wy.assign(1, 0.0);
            for (const auto& [yv, wv] : kinks) {
                st.y.push_back(yv);
                st.w.push_back(wv);
                st.pre_w.push_back(st.pre_w.back() + wv);
                st.pre_wy.push_back(st.pre_wy.back() + wv * yv);
            }
        }
    }

    const Dataset* data_;
    FoldPlan plan_;
    std::vector<NuisanceBundle> bundles_;
    double nu_hat_ = 0.5;
    std::vector<double> weights_;
    std::vector<UnitNuisance> nui_;
    TransportProvider transport_;
    std::vector<Bucket> buckets_[2];
    Steps steps_[2];
    double lo_ = 0.0, hi_ = 1.0;
};

// Quantile loss rho_tau(u) = u(tau - 1(u < 0)).
inline double quantile_loss(double u, double tau) {
    return u * (tau - (u < 0.0 ? 1.0 : 0.0));
}

inline double objective_value(const MomentContext& ctx, int t, double q, double tau) {
    return ctx.objective(t, q, tau);
}

inline double moment_value(const MomentContext& ctx, int t, double q, double tau) {
    return ctx.moment(t, q, tau);
}

// Grid scan plus golden-section refinement of the Psi-average. The
// empirical objective can be locally non-monotone under heterogeneous
// weights, so the solver stays derivative-free.
inline double solve_quantile(const MomentContext& ctx, int t, QuantileLevel tau,
                             int grid_points = 512) {
    const double lo = ctx.bracket_lo();
    const double hi = ctx.bracket_hi();
    const double range = hi - lo;
    double best_q = lo;
    double best_v = std::numeric_limits<double>::infinity();
    int best_i = 0;
    for (int i = 0; i < grid_points; ++i) {
        const double q = lo + range * i / static_cast<double>(grid_points - 1);
        const double v = ctx.objective(t, q, tau.tau);
        if (!std::isfinite(v)) {
            throw NumericError("solve_quantile: non-finite objective at q=" +
                               std::to_string(q));
        }
        if (v < best_v) {
            best_v = v;
            best_q = q;
            best_i = i;
        }
    }
    double a = lo + range * std::max(0, best_i - 1) / static_cast<double>(grid_points - 1);
    double b = lo + range * std::min(grid_points - 1, best_i + 1) /
                        static_cast<double>(grid_points - 1);
    const double tol = 1e-8 * range;
    const double phi = 0.6180339887498949;
    double x1 = b - phi * (b - a);
    double x2 = a + phi * (b - a);
    double f1 = ctx.objective(t, x1, tau.tau);
    double f2 = ctx.objective(t, x2, tau.tau);
    while (b - a > tol) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = ctx.objective(t, x1, tau.tau);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = ctx.objective(t, x2, tau.tau);
        }
    }
    const double mid = 0.5 * (a + b);
    return ctx.objective(t, mid, tau.tau) <= best_v ? mid : best_q;
}

}  // namespace longqte
