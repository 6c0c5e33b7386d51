#pragma once

// End-to-end cross-fitted QTE estimation: fold plan, per-fold nuisance
// bundles, quantile solves, and EIF-based confidence intervals.

#include <cstdint>
#include <vector>

#include "longqte/inference.hpp"

namespace longqte {

enum class Corruption { none, scores, outcome_means, both };

struct EstimateConfig {
    BundleConfig bundle;
    std::uint64_t seed = 1;
    double ci_alpha = 0.05;
    double j_floor = 1e-4;
    int grid_points = 512;
    Corruption corruption = Corruption::none;  // double-robustness studies only
};

struct QteEstimate {
    double tau = 0.5;
    double q1_hat = 0.0;
    double q0_hat = 0.0;
    double delta_hat = 0.0;
    double j1_hat = 0.0;
    double j0_hat = 0.0;
    double v_hat = 0.0;
    double ese = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::size_t n = 0;
};

inline MomentContext build_context(const Dataset& data, int k,
                                   const EstimateConfig& config) {
    FoldPlan plan = make_folds(data, k, config.seed);
    std::vector<NuisanceBundle> bundles;
    bundles.reserve(static_cast<std::size_t>(plan.k));
    for (int fold = 0; fold < plan.k; ++fold) {
        std::vector<std::size_t> training;
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (plan.assignment[i] != fold) training.push_back(i);
        }
        BundleConfig bc = config.bundle;
        bc.seed = detail::mix64(config.seed + 1000003ULL * static_cast<std::uint64_t>(fold + 1));
        NuisanceBundle b = fit_bundle(data, training, bc);
        if (config.corruption == Corruption::scores ||
            config.corruption == Corruption::both) {
            corrupt_scores(b);
        }
        if (config.corruption == Corruption::outcome_means ||
            config.corruption == Corruption::both) {
            corrupt_outcome_means(b);
        }
        bundles.push_back(std::move(b));
    }
    return MomentContext(data, std::move(plan), std::move(bundles));
}

inline QteEstimate estimate_from_context(const MomentContext& ctx,
                                         QuantileLevel tau,
                                         const EstimateConfig& config) {
    QteEstimate est;
    est.tau = tau.tau;
    est.n = ctx.dataset().size();
    est.q1_hat = solve_quantile(ctx, 1, tau, config.grid_points);
    est.q0_hat = solve_quantile(ctx, 0, tau, config.grid_points);
    est.delta_hat = est.q1_hat - est.q0_hat;
    est.j1_hat = estimate_J(ctx, 1, est.q1_hat, config.j_floor);
    est.j0_hat = estimate_J(ctx, 0, est.q0_hat, config.j_floor);
    const EifVector eif =
        eif_values(ctx, est.q1_hat, est.q0_hat, est.j1_hat, est.j0_hat, tau);
    est.v_hat = variance(eif);
    const ConfidenceInterval ci =
        confidence_interval(est.delta_hat, est.v_hat, est.n, config.ci_alpha);
    est.ese = ci.ese;
    est.ci_low = ci.low;
    est.ci_high = ci.high;
    return est;
}

// One fold plan and bundle set shared across all requested quantile levels.
inline std::vector<QteEstimate> estimate_qte(const Dataset& data, int k,
                                             const std::vector<QuantileLevel>& taus,
                                             const EstimateConfig& config) {
    const MomentContext ctx = build_context(data, k, config);
    std::vector<QteEstimate> out;
    out.reserve(taus.size());
    for (QuantileLevel tau : taus) {
        out.push_back(estimate_from_context(ctx, tau, config));
    }
    return out;
}

}  // namespace longqte
