#pragma once

// Ridge-penalized logistic regression fitted by iteratively reweighted
// least squares, with an optional degree-2 polynomial basis and
// probability clipping. Backs the treatment propensity e(X) and the
// sample-membership scores g_t(S,X).

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "longqte/dataset.hpp"

namespace longqte {

enum class FeatureMap { identity, poly2 };

namespace detail {

// Expanded feature vector including the leading intercept term.
inline void expand_features(const double* z, std::size_t p, FeatureMap map,
                            std::vector<double>& out) {
    out.clear();
    out.push_back(1.0);
    for (std::size_t i = 0; i < p; ++i) out.push_back(z[i]);
    if (map == FeatureMap::poly2) {
        for (std::size_t i = 0; i < p; ++i) {
            for (std::size_t j = i; j < p; ++j) out.push_back(z[i] * z[j]);
        }
    }
}

inline std::size_t expanded_dim(std::size_t p, FeatureMap map) {
    return map == FeatureMap::identity ? p + 1 : p + 1 + p * (p + 1) / 2;
}

}  // namespace detail

struct LogisticScoreModel {
    std::vector<double> coefficients;  // intercept first
    FeatureMap feature_map = FeatureMap::identity;
    std::size_t input_dim = 0;
    double clip = 0.01;

    double linear(const double* z, std::size_t p) const {
        std::vector<double> f;
        detail::expand_features(z, p, feature_map, f);
        double eta = 0.0;
        for (std::size_t j = 0; j < f.size(); ++j) eta += coefficients[j] * f[j];
        return eta;
    }

    // Clipped probability in [clip, 1-clip].
    double predict(const std::vector<double>& z) const {
        if (z.size() != input_dim) {
            throw ValidationError("logistic predict: input dimension mismatch");
        }
        const double eta = linear(z.data(), z.size());
        const double p = 1.0 / (1.0 + std::exp(-eta));
        return std::min(1.0 - clip, std::max(clip, p));
    }
};

struct LogisticConfig {
    FeatureMap basis = FeatureMap::identity;
    double clip = 0.01;
    double ridge = 1e-4;     // penalty on non-intercept coefficients
    double grad_tol = 1e-8;
    int max_iter = 100;
};

inline LogisticScoreModel fit_logistic(const std::vector<std::vector<double>>& features,
                                       const std::vector<int>& labels,
                                       const LogisticConfig& config = {}) {
    const std::size_t n = features.size();
    if (n == 0 || labels.size() != n) {
        throw ValidationError("fit_logistic: empty input or label size mismatch");
    }
    const std::size_t p_in = features[0].size();
    const std::size_t p = detail::expanded_dim(p_in, config.basis);
    if (n < p) {
        throw ValidationError("fit_logistic: fewer rows than expanded features");
    }
    bool has0 = false, has1 = false;
    Eigen::MatrixXd X(n, p);
    Eigen::VectorXd y(n);
    std::vector<double> row;
    for (std::size_t i = 0; i < n; ++i) {
        if (features[i].size() != p_in) {
            throw ValidationError("fit_logistic: ragged feature matrix");
        }
        detail::expand_features(features[i].data(), p_in, config.basis, row);
        for (std::size_t j = 0; j < p; ++j) {
            if (!std::isfinite(row[j])) {
                throw ValidationError("fit_logistic: non-finite feature value");
            }
            X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
        }
        y(static_cast<Eigen::Index>(i)) = labels[i];
        (labels[i] != 0 ? has1 : has0) = true;
    }
    if (!has0 || !has1) {
        throw ValidationError("fit_logistic: need at least one example of each label");
    }

    Eigen::VectorXd lambda = Eigen::VectorXd::Constant(p, config.ridge);
    lambda(0) = 0.0;  // intercept unpenalized
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    for (int it = 0; it < config.max_iter; ++it) {
        Eigen::VectorXd eta = X * beta;
        Eigen::VectorXd mu = (1.0 + (-eta.array()).exp()).inverse().matrix();
        Eigen::VectorXd grad =
            X.transpose() * (y - mu) - lambda.cwiseProduct(beta);
        if (grad.lpNorm<Eigen::Infinity>() <= config.grad_tol) break;
        Eigen::VectorXd w = mu.array() * (1.0 - mu.array());
        Eigen::MatrixXd H = X.transpose() * w.asDiagonal() * X;
        H.diagonal() += lambda;
        H.diagonal().array() += 1e-12;
        beta += H.ldlt().solve(grad);
    }

    LogisticScoreModel model;
    model.feature_map = config.basis;
    model.input_dim = p_in;
    model.clip = config.clip;
    model.coefficients.assign(beta.data(), beta.data() + p);
    return model;
}

}  // namespace longqte
