#pragma once

// Per-fold nuisance bundle: treatment propensity e(X), sample scores
// g_t(S,X), conditional outcome distributions Y | S,X,T=t,G=0 and
// surrogate distributions S | X,T=t,G=1, plus the Monte Carlo transport
// that turns observational conditionals into trial-population quantities.

#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "longqte/dataset.hpp"
#include "longqte/logistic.hpp"
#include "longqte/mixture.hpp"

namespace longqte {

// alpha_t(S,X) = g_t / ((1-g_t) * (t*e + (1-t)*(1-e))), Theorem 1's
// observational-sample weight. Inputs are post-clipping scores.
inline double alpha(double g, double e, int t) {
    const double denom_e = (t == 1) ? e : (1.0 - e);
    return g / ((1.0 - g) * denom_e);
}

struct BundleConfig {
    double clip = 0.01;
    int outcome_components = 3;
    int surrogate_components = 2;
    int r_draws = 200;
    std::uint64_t seed = 0;
    double ridge = 1e-4;
    int em_restarts = 3;
};

struct NuisanceBundle {
    LogisticScoreModel e_model;
    LogisticScoreModel g_models[2];
    ConditionalMixtureModel outcome_models[2];
    ConditionalMixtureModel surrogate_models[2];
    int mc_draws = 200;
    std::uint64_t rng_seed = 0;
    std::vector<std::size_t> training_index;

    double e_at(const std::vector<double>& x) const { return e_model.predict(x); }

    double g_at(int t, const std::vector<double>& s,
                const std::vector<double>& x) const {
        std::vector<double> sx = s;
        sx.insert(sx.end(), x.begin(), x.end());
        return g_models[t].predict(sx);
    }

    double alpha_at(int t, const std::vector<double>& s,
                    const std::vector<double>& x) const {
        return alpha(g_at(t, s, x), e_at(x), t);
    }

    // Outcome-model components at the unit's own (s, x).
    std::vector<GaussComp> own_components(int t, const std::vector<double>& s,
                                          const std::vector<double>& x) const {
        std::vector<double> sx = s;
        sx.insert(sx.end(), x.begin(), x.end());
        return outcome_models[t].components_at(sx);
    }

    // Equal-weight mixture over r surrogate draws at x: evaluating its
    // cdf/pdf/qloss gives m_t(x,q), the density bridge, and the
    // transported expected quantile loss. Draw stream is keyed by
    // (rng_seed, t, unit_id) so transports are reproducible and
    // unit-independent.
    std::vector<GaussComp> transported_components(int t,
                                                  const std::vector<double>& x,
                                                  std::uint64_t unit_id) const {
        SplitRng rng(rng_seed, 0x7245ULL, static_cast<std::uint64_t>(t), unit_id);
        std::vector<GaussComp> comps;
        comps.reserve(static_cast<std::size_t>(mc_draws) *
                      static_cast<std::size_t>(outcome_models[t].m_components()));
        const double inv_r = 1.0 / static_cast<double>(mc_draws);
        std::vector<double> sx;
        for (int rdraw = 0; rdraw < mc_draws; ++rdraw) {
            const std::vector<double> s = surrogate_models[t].sample(x, rng);
            sx = s;
            sx.insert(sx.end(), x.begin(), x.end());
            for (GaussComp c : outcome_models[t].components_at(sx)) {
                c.w *= inv_r;
                comps.push_back(c);
            }
        }
        return comps;
    }
};

struct TransportResult {
    double m;     // m_t(x,q)
    double q2;    // transported expected quantile loss
    double fbar;  // transported density at q
};

inline TransportResult transport(const ConditionalMixtureModel& outcome_model,
                                 const ConditionalMixtureModel& surrogate_model,
                                 const std::vector<double>& x, double q,
                                 QuantileLevel tau, int r_draws,
                                 std::uint64_t seed) {
    if (r_draws < 1) throw ValidationError("transport: r_draws must be >= 1");
    SplitRng rng(seed);
    double m_acc = 0.0, q2_acc = 0.0, f_acc = 0.0;
    std::vector<double> sx;
    for (int r = 0; r < r_draws; ++r) {
        const std::vector<double> s = surrogate_model.sample(x, rng);
        sx = s;
        sx.insert(sx.end(), x.begin(), x.end());
        const std::vector<GaussComp> comps = outcome_model.components_at(sx);
        m_acc += mixture_cdf(comps, q);
        q2_acc += mixture_qloss(comps, q, tau.tau);
        f_acc += mixture_pdf(comps, q);
    }
    const double inv = 1.0 / static_cast<double>(r_draws);
    return {m_acc * inv, q2_acc * inv, f_acc * inv};
}

inline NuisanceBundle fit_bundle(const Dataset& data,
                                 const std::vector<std::size_t>& training_index,
                                 const BundleConfig& config) {
    auto require = [&](const std::vector<std::size_t>& idx, int g, int t) {
        if (idx.empty()) {
            throw ValidationError("fit_bundle: training set has no units in cell (g=" +
                                  std::to_string(g) + ",t=" + std::to_string(t) + ")");
        }
    };
    std::vector<std::size_t> cell[2][2];
    for (std::size_t i : training_index) {
        const Unit& u = data.unit(i);
        cell[u.g][u.t].push_back(i);
    }
    for (int g = 0; g < 2; ++g) {
        for (int t = 0; t < 2; ++t) require(cell[g][t], g, t);
    }

    NuisanceBundle bundle;
    bundle.mc_draws = config.r_draws;
    bundle.rng_seed = config.seed;
    bundle.training_index = training_index;

    auto concat = [](const std::vector<double>& a, const std::vector<double>& b) {
        std::vector<double> out = a;
        out.insert(out.end(), b.begin(), b.end());
        return out;
    };

    // Treatment propensity on the experimental sample.
    {
        std::vector<std::vector<double>> feats;
        std::vector<int> labels;
        for (int t = 0; t < 2; ++t) {
            for (std::size_t i : cell[1][t]) {
                feats.push_back(data.unit(i).x);
                labels.push_back(data.unit(i).t);
            }
        }
        LogisticConfig lc;
        lc.basis = FeatureMap::identity;
        lc.clip = config.clip;
        lc.ridge = config.ridge;
        bundle.e_model = fit_logistic(feats, labels, lc);
    }

    // Sample-membership scores, one per treatment arm.
    for (int t = 0; t < 2; ++t) {
        std::vector<std::vector<double>> feats;
        std::vector<int> labels;
        for (int g = 0; g < 2; ++g) {
            for (std::size_t i : cell[g][t]) {
                const Unit& u = data.unit(i);
                feats.push_back(concat(u.s, u.x));
                labels.push_back(u.g);
            }
        }
        LogisticConfig lc;
        lc.basis = FeatureMap::poly2;
        lc.clip = config.clip;
        lc.ridge = config.ridge;
        // Fall back to the identity basis when the expanded design would
        // be wider than the training rows.
        if (feats.size() < detail::expanded_dim(feats[0].size(), lc.basis)) {
            lc.basis = FeatureMap::identity;
        }
        bundle.g_models[t] = fit_logistic(feats, labels, lc);
    }

    // Conditional outcome distributions on the observational sample.
    for (int t = 0; t < 2; ++t) {
        std::vector<std::vector<double>> cond;
        std::vector<std::vector<double>> resp;
        for (std::size_t i : cell[0][t]) {
            const Unit& u = data.unit(i);
            cond.push_back(concat(u.s, u.x));
            resp.push_back({*u.y});
        }
        MixtureConfig mc;
        mc.m_components = config.outcome_components;
        mc.n_restarts = config.em_restarts;
        mc.seed = detail::mix64(config.seed + 11 + static_cast<std::uint64_t>(t));
        while (mc.m_components > 1 &&
               cond.size() < static_cast<std::size_t>(10 * mc.m_components)) {
            --mc.m_components;
        }
        bundle.outcome_models[t] = fit_mixture(cond, resp, mc);
    }

    // Surrogate distributions on the experimental sample.
    for (int t = 0; t < 2; ++t) {
        std::vector<std::vector<double>> cond;
        std::vector<std::vector<double>> resp;
        for (std::size_t i : cell[1][t]) {
            const Unit& u = data.unit(i);
            cond.push_back(u.x);
            resp.push_back(u.s);
        }
        MixtureConfig mc;
        mc.m_components = config.surrogate_components;
        mc.n_restarts = config.em_restarts;
        mc.seed = detail::mix64(config.seed + 23 + static_cast<std::uint64_t>(t));
        while (mc.m_components > 1 &&
               cond.size() < static_cast<std::size_t>(10 * mc.m_components)) {
            --mc.m_components;
        }
        bundle.surrogate_models[t] = fit_mixture(cond, resp, mc);
    }

    return bundle;
}

// Deliberate misspecifications used by the double-robustness checks.
inline void corrupt_scores(NuisanceBundle& bundle) {
    for (double& c : bundle.e_model.coefficients) c = 0.0;
    for (int t = 0; t < 2; ++t) {
        for (double& c : bundle.g_models[t].coefficients) c = 0.0;
    }
}

inline void corrupt_outcome_means(NuisanceBundle& bundle, double shift = 5.0) {
    for (int t = 0; t < 2; ++t) {
        for (auto& coef : bundle.outcome_models[t].mean_params) coef(0, 0) += shift;
    }
}

// --- JSON serialization (versioned) ---

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    const std::size_t nrow = j.size();
    const std::size_t ncol = nrow ? j[0].size() : 0;
    Eigen::MatrixXd m(static_cast<Eigen::Index>(nrow), static_cast<Eigen::Index>(ncol));
    for (std::size_t i = 0; i < nrow; ++i) {
        for (std::size_t c = 0; c < ncol; ++c) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
                j[i][c].get<double>();
        }
    }
    return m;
}

inline nlohmann::json logistic_to_json(const LogisticScoreModel& m) {
    return {{"coefficients", m.coefficients},
            {"basis", m.feature_map == FeatureMap::poly2 ? "poly2" : "identity"},
            {"input_dim", m.input_dim},
            {"clip", m.clip}};
}

inline LogisticScoreModel logistic_from_json(const nlohmann::json& j) {
    LogisticScoreModel m;
    m.coefficients = j.at("coefficients").get<std::vector<double>>();
    m.feature_map = j.at("basis").get<std::string>() == "poly2" ? FeatureMap::poly2
                                                                : FeatureMap::identity;
    m.input_dim = j.at("input_dim").get<std::size_t>();
    m.clip = j.at("clip").get<double>();
    return m;
}

}  // namespace detail

inline nlohmann::json mixture_to_json(const ConditionalMixtureModel& m) {
    nlohmann::json j;
    j["m_components"] = m.m_components();
    j["response_dim"] = m.response_dim();
    j["cond_dim"] = m.cond_dim();
    std::vector<double> floors;
    for (std::size_t d = 0; d < m.response_dim(); ++d) floors.push_back(m.sd_floor(d));
    j["sd_floor"] = floors;
    j["weight_logits"] = detail::matrix_to_json(m.weight_logits);
    nlohmann::json means = nlohmann::json::array();
    nlohmann::json sds = nlohmann::json::array();
    for (int c = 0; c < m.m_components(); ++c) {
        means.push_back(detail::matrix_to_json(m.mean_params[static_cast<std::size_t>(c)]));
        sds.push_back(detail::matrix_to_json(m.log_sd_params[static_cast<std::size_t>(c)]));
    }
    j["mean_params"] = means;
    j["log_sd_params"] = sds;
    return j;
}

inline ConditionalMixtureModel mixture_from_json(const nlohmann::json& j) {
    const int m = j.at("m_components").get<int>();
    std::vector<Eigen::MatrixXd> means, sds;
    for (int c = 0; c < m; ++c) {
        means.push_back(detail::matrix_from_json(j.at("mean_params")[c]));
        sds.push_back(detail::matrix_from_json(j.at("log_sd_params")[c]));
    }
    return ConditionalMixtureModel::from_parameters(
        m, j.at("response_dim").get<std::size_t>(),
        j.at("cond_dim").get<std::size_t>(),
        j.at("sd_floor").get<std::vector<double>>(),
        detail::matrix_from_json(j.at("weight_logits")), std::move(means),
        std::move(sds));
}

inline nlohmann::json bundle_to_json(const NuisanceBundle& b) {
    nlohmann::json j;
    j["format"] = "longqte-bundle";
    j["version"] = 1;
    j["e_model"] = detail::logistic_to_json(b.e_model);
    for (int t = 0; t < 2; ++t) {
        const std::string suffix = std::to_string(t);
        j["g_model_" + suffix] = detail::logistic_to_json(b.g_models[t]);
        j["outcome_model_" + suffix] = mixture_to_json(b.outcome_models[t]);
        j["surrogate_model_" + suffix] = mixture_to_json(b.surrogate_models[t]);
    }
    j["mc_draws"] = b.mc_draws;
    j["rng_seed"] = b.rng_seed;
    j["training_index"] = b.training_index;
    return j;
}

inline NuisanceBundle bundle_from_json(const nlohmann::json& j) {
    if (j.at("format") != "longqte-bundle" || j.at("version") != 1) {
        throw ValidationError("unsupported bundle document");
    }
    NuisanceBundle b;
    b.e_model = detail::logistic_from_json(j.at("e_model"));
    for (int t = 0; t < 2; ++t) {
        const std::string suffix = std::to_string(t);
        b.g_models[t] = detail::logistic_from_json(j.at("g_model_" + suffix));
        b.outcome_models[t] = mixture_from_json(j.at("outcome_model_" + suffix));
        b.surrogate_models[t] = mixture_from_json(j.at("surrogate_model_" + suffix));
    }
    b.mc_draws = j.at("mc_draws").get<int>();
    b.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    b.training_index = j.at("training_index").get<std::vector<std::size_t>>();
    return b;
}

}  // namespace longqte
