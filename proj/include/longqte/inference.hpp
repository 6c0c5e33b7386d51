#pragma once

// Plug-in efficient-influence-function values, the density bridge J_t,
// the variance estimator, and Wald confidence intervals.

#include <cmath>
#include <string>
#include <vector>

#include "longqte/estimator.hpp"

namespace longqte {

struct EifVector {
    std::vector<double> phi;
    double mean = 0.0;
    std::size_t n = 0;
};

struct ConfidenceInterval {
    double level;
    double low;
    double high;
    double ese;  // sqrt(V_hat / N)
};

// J_t = E[E[f_t(q | S,X) | X,T=t,G=1] | G=1], estimated by averaging the
// transported density over the experimental sample. Floored to keep the
// inverse from blowing up when the fitted density collapses near q.
inline double estimate_J(const MomentContext& ctx, int t, double q_hat,
                         double j_floor = 1e-4, bool* floored = nullptr) {
    double acc = 0.0;
    std::size_t n1 = 0;
    for (std::size_t i = 0; i < ctx.dataset().size(); ++i) {
        if (ctx.dataset().unit(i).g != 1) continue;
        acc += mixture_pdf(ctx.transported(i, t), q_hat);
        ++n1;
    }
    const double j = acc / static_cast<double>(n1);
    if (floored) *floored = j < j_floor;
    return std::max(j, j_floor);
}

// phi_i = J1^{-1} psi_1(W_i; q1) - J0^{-1} psi_0(W_i; q0), each unit
// evaluated with its own fold's bundle.
inline EifVector eif_values(const MomentContext& ctx, double q1_hat, double q0_hat,
                            double j1_hat, double j0_hat, QuantileLevel tau) {
    EifVector out;
    out.n = ctx.dataset().size();
    out.phi.resize(out.n);
    double acc = 0.0;
    for (std::size_t i = 0; i < out.n; ++i) {
        const double v = ctx.psi_unit(i, 1, q1_hat, tau.tau) / j1_hat -
                         ctx.psi_unit(i, 0, q0_hat, tau.tau) / j0_hat;
        out.phi[i] = v;
        acc += v;
    }
    out.mean = acc / static_cast<double>(out.n);
    return out;
}

// V_hat: population-style (1/N) centered second moment of the phi values.
inline double variance(const EifVector& eif) {
    double acc = 0.0;
    for (double v : eif.phi) {
        const double d = v - eif.mean;
        acc += d * d;
    }
    return acc / static_cast<double>(eif.n);
}

inline ConfidenceInterval confidence_interval(double delta_hat, double v_hat,
                                              std::size_t n, double alpha) {
    if (v_hat < 0.0 || n < 1 || !(alpha > 0.0 && alpha <= 1.0)) {
        throw ValidationError("confidence_interval: invalid inputs");
    }
    const double ese = std::sqrt(v_hat / static_cast<double>(n));
    const double z = alpha >= 1.0 ? 0.0 : inverse_normal_cdf(1.0 - alpha / 2.0);
    return {1.0 - alpha, delta_hat - z * ese, delta_hat + z * ese, ese};
}

}  // namespace longqte
