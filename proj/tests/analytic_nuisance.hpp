#pragma once

// Exact nuisance functions for the gaussian-noise structural model, used
// to drive a MomentContext directly without any fitting. All quantities
// follow from the data-generating equations:
//   Y | S,X,T=t        ~ N(t + 3(X1+X2) + S, 1)
//   S | X,T=t          ~ N(2(X1+X2) + t, 1)          (both samples)
//   Y(t) | X            ~ N(2t + 5(X1+X2), 2)          (transported)
//   Pr(T=1 | X, G=1)   = 1/2
//   Pr(G=1 | X, T=t)   by Bayes from the two covariate laws; the shared
//                        surrogate density cancels, so S drops out.

#include <cmath>
#include <vector>

#include "longqte/estimator.hpp"
#include "longqte/simulation.hpp"

namespace testhelp {

inline double norm_density(double v, double mu, double sd) {
    return longqte::normal_pdf((v - mu) / sd) / sd;
}

inline double true_g(int t, const std::vector<double>& x, double nu) {
    const double xs = x[0] + x[1];
    const double f1 = norm_density(x[0], 0.0, 1.0) * norm_density(x[1], 0.0, 1.0) * 0.5;
    const double pt = longqte::expit(0.25 * xs);
    const double f0 = norm_density(x[0], 0.5, 1.5) * norm_density(x[1], 0.5, 1.5) *
                      (t == 1 ? pt : 1.0 - pt);
    return nu * f1 / (nu * f1 + (1.0 - nu) * f0);
}

inline std::vector<longqte::UnitNuisance> true_nuisances(const longqte::Dataset& data) {
    const double nu = data.nu_hat();
    std::vector<longqte::UnitNuisance> out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const longqte::Unit& u = data.unit(i);
        longqte::UnitNuisance& n = out[i];
        n.e = 0.5;
        const double xs = u.x[0] + u.x[1];
        n.own = {{1.0, u.t + 3.0 * xs + u.s[0], 1.0}};
        if (u.g == 0) n.alpha = longqte::alpha(true_g(u.t, u.x, nu), 0.5, u.t);
    }
    return out;
}

inline longqte::TransportProvider true_transport(const longqte::Dataset& data) {
    return [&data](std::size_t i, int t) {
        const longqte::Unit& u = data.unit(i);
        const double xs = u.x[0] + u.x[1];
        return std::vector<longqte::GaussComp>{
            {1.0, 2.0 * t + 5.0 * xs, std::sqrt(2.0)}};
    };
}

}  // namespace testhelp
