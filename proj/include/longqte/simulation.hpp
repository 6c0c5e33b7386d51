#pragma once

// Monte Carlo study harness: the simulation data-generating process,
// brute-force ground-truth quantile treatment effects, and replication
// studies aggregating Bias / SD / ESE / CP95.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "longqte/qte.hpp"

namespace longqte {

struct NoiseSpec {
    enum class Kind { gaussian, scaled_t };
    Kind kind = Kind::gaussian;
    int kappa = 3;  // scaled_t degrees of freedom, > 2

    // Unit-variance outcome noise: scale sqrt((kappa-2)/kappa) on t(kappa).
    double draw(SplitRng& rng) const {
        if (kind == Kind::gaussian) return rng.normal();
        const double scale =
            std::sqrt((kappa - 2) / static_cast<double>(kappa));
        return scale * rng.student_t(kappa);
    }

    std::string name() const {
        if (kind == Kind::gaussian) return "gaussian";
        return "t" + std::to_string(kappa);
    }

    static NoiseSpec gaussian() { return NoiseSpec{}; }
    static NoiseSpec scaled_t(int kappa) {
        if (kappa <= 2) throw ValidationError("scaled_t noise needs kappa > 2");
        return NoiseSpec{Kind::scaled_t, kappa};
    }
};

struct SimConfig {
    std::size_t n_rct = 500;
    std::size_t n_obs = 0;  // 0 means 5 * n_rct
    NoiseSpec noise;
    std::vector<double> taus = {0.25, 0.5, 0.75};
    int k_folds = 5;
    int n_reps = 200;
    std::uint64_t base_seed = 1;
    EstimateConfig estimate;
    int threads = 0;  // 0: LONGQTE_THREADS or hardware concurrency

    std::size_t resolved_n_obs() const { return n_obs ? n_obs : 5 * n_rct; }
};

struct SimCell {
    std::string noise;
    int kappa = 0;  // 0 for gaussian
    std::size_t n_rct = 0;
    double tau = 0.5;
    double bias = 0.0;
    double sd = 0.0;
    double ese = 0.0;
    double cp95 = 0.0;
    int n_reps = 0;
    int failures = 0;
};

struct SimReport {
    std::vector<SimCell> cells;
    double wall_time_s = 0.0;  // console-only, never part of result documents
};

inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Section-5 structural model. RCT: X ~ N(0, I2), T ~ Bernoulli(1/2),
// S = 2(X1+X2) + T + eps_S, Y = T + 3(X1+X2) + S + eps_Y (Y withheld).
// Observational: X ~ N(0.5, 1.5^2 I2), Pr(T=1|X) = expit(0.25 X1 + 0.25 X2),
// same S and Y equations, Y retained.
inline Dataset generate(std::size_t n_rct, std::size_t n_obs, NoiseSpec noise,
                        std::uint64_t rep_seed) {
    std::vector<Unit> units;
    units.reserve(n_rct + n_obs);
    for (std::size_t g = 0; g < 2; ++g) {
        const std::size_t n = g == 1 ? n_rct : n_obs;
        for (std::size_t i = 0; i < n; ++i) {
            SplitRng rng(rep_seed, 0xD67AULL, g, i);
            Unit u;
            u.g = static_cast<int>(g);
            if (g == 1) {
                u.x = {rng.normal(), rng.normal()};
                u.t = rng.bernoulli(0.5) ? 1 : 0;
            } else {
                u.x = {0.5 + 1.5 * rng.normal(), 0.5 + 1.5 * rng.normal()};
                u.t = rng.bernoulli(expit(0.25 * u.x[0] + 0.25 * u.x[1])) ? 1 : 0;
            }
            const double xs = u.x[0] + u.x[1];
            const double s = 2.0 * xs + u.t + rng.normal();
            u.s = {s};
            const double y = u.t + 3.0 * xs + s + noise.draw(rng);
            if (g == 0) u.y = y;
            units.push_back(std::move(u));
        }
    }
    return Dataset(std::move(units), 2, 1);
}

// Brute-force truth: simulate potential outcomes for the trial population
// (Y(t) = 2t + 5(X1+X2) + eps_S + eps_Y by substitution) and take empirical
// quantile differences. The model is a pure location shift, so the true
// effect is 2 at every quantile level; the Monte Carlo run confirms it.
inline std::vector<double> oracle_true_qte(NoiseSpec noise,
                                           const std::vector<double>& taus,
                                           std::size_t n_draws,
                                           std::uint64_t seed = 0x04AC1EULL) {
    if (n_draws < 10000) throw ValidationError("oracle_true_qte: n_draws too small");
    std::vector<std::vector<double>> y(2);
    for (int t = 0; t < 2; ++t) {
        y[t].resize(n_draws);
        SplitRng rng(seed, 0x04AC1EULL, static_cast<std::uint64_t>(t));
        for (std::size_t i = 0; i < n_draws; ++i) {
            const double xs = rng.normal() + rng.normal();
            y[t][i] = 2.0 * t + 5.0 * xs + rng.normal() + noise.draw(rng);
        }
    }
    std::vector<double> out;
    for (double tau : taus) {
        double q[2];
        for (int t = 0; t < 2; ++t) {
            const std::size_t k = std::min(
                n_draws - 1, static_cast<std::size_t>(tau * static_cast<double>(n_draws)));
            std::nth_element(y[t].begin(),
                             y[t].begin() + static_cast<std::ptrdiff_t>(k), y[t].end());
            q[t] = y[t][k];
        }
        out.push_back(q[1] - q[0]);
    }
    return out;
}

inline constexpr double kTrueDelta = 2.0;

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("LONGQTE_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc ? static_cast<int>(hc) : 1;
}

inline SimReport run_study(const SimConfig& config) {
    if (config.n_reps < 1) throw ValidationError("run_study: n_reps must be >= 1");
    const auto start = std::chrono::steady_clock::now();
    const std::size_t n_taus = config.taus.size();

    struct RepResult {
        bool ok = false;
        std::vector<double> delta;
        std::vector<double> ese;
        std::vector<bool> covered;
    };
    std::vector<RepResult> results(static_cast<std::size_t>(config.n_reps));

    auto run_rep = [&](int r) {
        RepResult& out = results[static_cast<std::size_t>(r)];
        try {
            const std::uint64_t rep_seed =
                config.base_seed + static_cast<std::uint64_t>(r);
            const Dataset data = generate(config.n_rct, config.resolved_n_obs(),
                                          config.noise, rep_seed);
            EstimateConfig ec = config.estimate;
            ec.seed = rep_seed;
            std::vector<QuantileLevel> taus;
            for (double t : config.taus) taus.emplace_back(t);
            const std::vector<QteEstimate> ests =
                estimate_qte(data, config.k_folds, taus, ec);
            for (const QteEstimate& e : ests) {
                out.delta.push_back(e.delta_hat);
                out.ese.push_back(e.ese);
                out.covered.push_back(e.ci_low <= kTrueDelta && kTrueDelta <= e.ci_high);
            }
            out.ok = true;
        } catch (const std::exception&) {
            out.ok = false;
        }
    };

    const int n_threads = std::min(resolve_threads(config.threads), config.n_reps);
    if (n_threads <= 1) {
        for (int r = 0; r < config.n_reps; ++r) run_rep(r);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        for (int w = 0; w < n_threads; ++w) {
            pool.emplace_back([&] {
                for (int r = next.fetch_add(1); r < config.n_reps;
                     r = next.fetch_add(1)) {
                    run_rep(r);
                }
            });
        }
        for (std::thread& th : pool) th.join();
    }

    SimReport report;
    for (std::size_t ti = 0; ti < n_taus; ++ti) {
        SimCell cell;
        cell.noise = config.noise.name();
        cell.kappa = config.noise.kind == NoiseSpec::Kind::scaled_t ? config.noise.kappa : 0;
        cell.n_rct = config.n_rct;
        cell.tau = config.taus[ti];
        double sum = 0.0, sum_ese = 0.0;
        int covered = 0, ok = 0;
        for (const RepResult& r : results) {
            if (!r.ok) continue;
            ++ok;
            sum += r.delta[ti];
            sum_ese += r.ese[ti];
            covered += r.covered[ti] ? 1 : 0;
        }
        cell.n_reps = ok;
        cell.failures = config.n_reps - ok;
        if (ok > 0) {
            const double mean = sum / ok;
            cell.bias = mean - kTrueDelta;
            cell.ese = sum_ese / ok;
            cell.cp95 = static_cast<double>(covered) / ok;
            double ss = 0.0;
            for (const RepResult& r : results) {
                if (!r.ok) continue;
                const double d = r.delta[ti] - mean;
                ss += d * d;
            }
            cell.sd = ok > 1 ? std::sqrt(ss / (ok - 1)) : 0.0;
        }
        report.cells.push_back(std::move(cell));
    }
    report.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

inline std::string report_to_csv(const SimReport& report) {
    std::ostringstream out;
    out << "noise,kappa,n_rct,tau,bias,sd,ese,cp95,n_reps,failures\n";
    for (const SimCell& c : report.cells) {
        out << c.noise << ',' << c.kappa << ',' << c.n_rct << ','
            << detail::format_double(c.tau) << ',' << detail::format_double(c.bias)
            << ',' << detail::format_double(c.sd) << ','
            << detail::format_double(c.ese) << ',' << detail::format_double(c.cp95)
            << ',' << c.n_reps << ',' << c.failures << '\n';
    }
    return out.str();
}

// Text table mirroring the Bias(SD) / ESE / CP95 layout.
inline std::string report_to_table(const SimReport& report) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof(line), "%-10s %8s %6s %14s %8s %8s %6s\n", "noise",
                  "n_rct", "tau", "Bias(SD)", "ESE", "CP95", "fail");
    out << line;
    for (const SimCell& c : report.cells) {
        char bias_sd[48];
        std::snprintf(bias_sd, sizeof(bias_sd), "%.3f(%.2f)", c.bias, c.sd);
        std::snprintf(line, sizeof(line), "%-10s %8zu %6.2f %14s %8.2f %8.1f %6d\n",
                      c.noise.c_str(), c.n_rct, c.tau, bias_sd, c.ese,
                      100.0 * c.cp95, c.failures);
        out << line;
    }
    return out.str();
}

}  // namespace longqte
