// Acceptance gate: one test case per release criterion, each printing a
// single PASS/FAIL line. Run the whole binary or filter with -tc.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "analytic_nuisance.hpp"
#include "longqte/qte.hpp"
#include "longqte/simulation.hpp"
#include "random_context.hpp"

using namespace longqte;

namespace {

struct CriterionLog {
    const char* name;
    bool ok = true;
    std::ostringstream detail;

    explicit CriterionLog(const char* n) : name(n) {}

    void require(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            detail << (detail.str().empty() ? "" : "; ") << what;
        }
        CHECK_MESSAGE(cond, what);
    }

    ~CriterionLog() {
        std::printf("%s: %s%s%s\n", name, ok ? "PASS" : "FAIL",
                    detail.str().empty() ? "" : " -- ", detail.str().c_str());
        std::fflush(stdout);
    }
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), f, a, b, c, d);
    return buf;
}

}  // namespace

TEST_CASE("criterion1 oracle truth") {
    CriterionLog log("criterion 1 (oracle truth)");
    const auto start = std::chrono::steady_clock::now();
    const std::vector<NoiseSpec> laws = {
        NoiseSpec::scaled_t(3), NoiseSpec::scaled_t(5), NoiseSpec::scaled_t(7),
        NoiseSpec::scaled_t(9), NoiseSpec::gaussian()};
    for (const NoiseSpec& law : laws) {
        const auto deltas = oracle_true_qte(law, {0.25, 0.5, 0.75}, 10000000, 1);
        for (std::size_t i = 0; i < deltas.size(); ++i) {
            log.require(std::abs(deltas[i] - 2.0) <= 0.01,
                        law.name() + fmt(" tau=%.2f delta=%.4f off by >0.01",
                                         0.25 * (static_cast<double>(i) + 1),
                                         deltas[i]));
        }
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    log.require(secs <= 120.0, fmt("runtime %.1fs > 120s", secs));
}

namespace {

void check_table_row(CriterionLog& log, const SimConfig& sc, double paper_sd) {
    const SimReport report = run_study(sc);
    REQUIRE(report.cells.size() == 1);
    const SimCell& c = report.cells[0];
    const std::string tag = c.noise + fmt(" n=%.0f: ", static_cast<double>(c.n_rct));
    log.require(c.failures == 0, tag + fmt("%.0f replications failed",
                                           static_cast<double>(c.failures)));
    log.require(std::abs(c.bias) <= 0.15, tag + fmt("|bias|=%.3f > 0.15", std::abs(c.bias)));
    log.require(c.sd >= 0.75 * paper_sd && c.sd <= (4.0 / 3.0) * paper_sd,
                tag + fmt("SD=%.3f outside [%.3f, %.3f]", c.sd, 0.75 * paper_sd,
                          (4.0 / 3.0) * paper_sd));
    const double ratio = c.ese / c.sd;
    log.require(ratio >= 0.8 && ratio <= 1.4,
                tag + fmt("ESE/SD=%.2f outside [0.8, 1.4]", ratio));
    log.require(c.cp95 >= 0.90 && c.cp95 <= 0.99,
                tag + fmt("CP95=%.3f outside [0.90, 0.99]", c.cp95));
}

}  // namespace

TEST_CASE("criterion2 table reproduction") {
    CriterionLog log("criterion 2 (desk-scale study)");
    SimConfig sc;
    sc.taus = {0.5};
    sc.k_folds = 5;
    sc.n_reps = 200;
    sc.base_seed = 20260826;
    sc.noise = NoiseSpec::gaussian();
    sc.n_rct = 1000;
    check_table_row(log, sc, 0.60);
    sc.noise = NoiseSpec::scaled_t(3);
    sc.n_rct = 500;
    check_table_row(log, sc, 0.86);
}

TEST_CASE("criterion3 double robustness") {
    CriterionLog log("criterion 3 (double robustness)");
    SimConfig sc;
    sc.taus = {0.5};
    sc.k_folds = 5;
    sc.n_reps = 50;
    sc.n_rct = 4000;
    sc.base_seed = 7070;
    sc.noise = NoiseSpec::gaussian();
    sc.estimate.bundle.r_draws = 50;
    auto mean_delta = [&](Corruption c) {
        sc.estimate.corruption = c;
        const SimReport r = run_study(sc);
        REQUIRE(r.cells.size() == 1);
        REQUIRE(r.cells[0].failures == 0);
        return 2.0 + r.cells[0].bias;
    };
    const double m_scores = mean_delta(Corruption::scores);
    log.require(std::abs(m_scores - 2.0) <= 0.2,
                fmt("corrupted scores: mean=%.3f off by >0.2", m_scores));
    const double m_outcome = mean_delta(Corruption::outcome_means);
    log.require(std::abs(m_outcome - 2.0) <= 0.2,
                fmt("corrupted outcome models: mean=%.3f off by >0.2", m_outcome));
    const double m_both = mean_delta(Corruption::both);
    log.require(std::abs(m_both - 2.0) > 0.5,
                fmt("both corrupted: mean=%.3f still within 0.5", m_both));
}

TEST_CASE("criterion4 moment-objective duality") {
    CriterionLog log("criterion 4 (moment-objective duality)");
    const double h = 1e-4;
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const auto rc = testhelp::make_random_context(seed);
        SplitRng qrng(seed, 0xFD0);
        for (int t = 0; t < 2; ++t) {
            for (int ti = 1; ti <= 9; ++ti) {
                const double tau = 0.1 * ti;
                // Keep q away from observed-outcome kinks, where the
                // objective is non-differentiable by construction.
                double q = 0.0;
                for (int attempt = 0; attempt < 100; ++attempt) {
                    q = rc.ctx.bracket_lo() +
                        (rc.ctx.bracket_hi() - rc.ctx.bracket_lo()) * qrng.uniform();
                    bool near_kink = false;
                    for (const Unit& u : rc.data->units()) {
                        if (u.y && std::abs(*u.y - q) < 10 * h) near_kink = true;
                    }
                    if (!near_kink) break;
                }
                const double fd = (rc.ctx.objective(t, q + h, tau) -
                                   rc.ctx.objective(t, q - h, tau)) /
                                  (2 * h);
                worst = std::max(worst, std::abs(fd - rc.ctx.moment(t, q, tau)));
            }
        }
    }
    log.require(worst <= 1e-4, fmt("max |fd - moment| = %.2e > 1e-4", worst));
}

TEST_CASE("criterion5 influence function sanity") {
    CriterionLog log("criterion 5 (influence function sanity)");
    const std::size_t n_rct = 20000, n_obs = 80000;
    const Dataset data = generate(n_rct, n_obs, NoiseSpec::gaussian(), 51);
    const MomentContext ctx(data, testhelp::true_nuisances(data),
                            testhelp::true_transport(data));
    const double tau = 0.5;
    const double sd_y = std::sqrt(52.0);
    const double z_tau = inverse_normal_cdf(tau);
    const double q[2] = {sd_y * z_tau, 2.0 + sd_y * z_tau};
    const double nu = data.nu_hat();
    const std::size_t n = data.size();

    // Mean of psi at the true quantile vs its own standard error.
    for (int t = 0; t < 2; ++t) {
        double acc = 0.0, acc2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double v = ctx.psi_unit(i, t, q[t], tau);
            acc += v;
            acc2 += v * v;
        }
        const double mean = acc / static_cast<double>(n);
        const double se =
            std::sqrt((acc2 / static_cast<double>(n) - mean * mean) /
                      static_cast<double>(n));
        log.require(std::abs(mean) <= 3.0 * se,
                    fmt("t=%.0f: |mean psi| = %.2e > 3 SE = %.2e",
                        static_cast<double>(t), std::abs(mean), 3.0 * se));
    }

    // Variance of the influence values vs an independent transcription of
    // the formulas, written directly from the structural model.
    const double j1 = estimate_J(ctx, 1, q[1]);
    const double j0 = estimate_J(ctx, 0, q[0]);
    const EifVector eif = eif_values(ctx, q[1], q[0], j1, j0, QuantileLevel(tau));
    const double v_library = variance(eif);

    const double rt2 = std::sqrt(2.0);
    double jd[2] = {0.0, 0.0};
    for (const Unit& u : data.units()) {
        if (u.g != 1) continue;
        const double xs = u.x[0] + u.x[1];
        for (int t = 0; t < 2; ++t) {
            jd[t] += normal_pdf((q[t] - 2.0 * t - 5.0 * xs) / rt2) / rt2;
        }
    }
    jd[0] /= static_cast<double>(data.n1());
    jd[1] /= static_cast<double>(data.n1());
    auto psi_direct = [&](const Unit& u, int t) {
        const double xs = u.x[0] + u.x[1];
        const double m = normal_cdf((q[t] - 2.0 * t - 5.0 * xs) / rt2);
        if (u.g == 1) {
            double v = m - tau;
            if (u.t == t) {
                const double f = normal_cdf(q[t] - t - 3.0 * xs - u.s[0]);
                v += (f - m) / 0.5;
            }
            return v / nu;
        }
        if (u.t != t) return 0.0;
        const double f = normal_cdf(q[t] - t - 3.0 * xs - u.s[0]);
        const double a = alpha(testhelp::true_g(t, u.x, nu), 0.5, t);
        return a * ((*u.y <= q[t] ? 1.0 : 0.0) - f) / nu;
    };
    double acc = 0.0;
    std::vector<double> phi(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Unit& u = data.unit(i);
        phi[i] = psi_direct(u, 1) / jd[1] - psi_direct(u, 0) / jd[0];
        acc += phi[i];
    }
    const double mean = acc / static_cast<double>(n);
    double ss = 0.0;
    for (double v : phi) ss += (v - mean) * (v - mean);
    const double v_direct = ss / static_cast<double>(n);
    log.require(std::abs(v_library / v_direct - 1.0) <= 0.05,
                fmt("var ratio %.4f outside 1 +/- 0.05", v_library / v_direct));
}

TEST_CASE("criterion6 distribution model consistency") {
    CriterionLog log("criterion 6 (distribution-model consistency)");
    double worst_pdf = 0.0, worst_deriv = 0.0;
    bool monotone = true, bounded = true;
    int mc_over_3se = 0;
    double worst_z = 0.0;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        SplitRng rng(seed, 0x51AB);
        const std::vector<GaussComp> mix = testhelp::random_comps(rng, 5);
        const double h = 1e-5;
        double prev = -1.0;
        for (int i = 0; i <= 200; ++i) {
            const double qv = -15.0 + 0.15 * i;
            const double cdf = mixture_cdf(mix, qv);
            if (cdf < prev) monotone = false;
            // 1e-12 headroom for roundoff in the normalized weights.
            if (cdf < -1e-12 || cdf > 1.0 + 1e-12) bounded = false;
            prev = cdf;
        }
        const double tau = 0.05 + 0.9 * rng.uniform();
        for (int i = 0; i < 5; ++i) {
            const double qv = -9.0 + 18.0 * rng.uniform();
            const double fd_pdf =
                (mixture_cdf(mix, qv + h) - mixture_cdf(mix, qv - h)) / (2 * h);
            worst_pdf = std::max(worst_pdf, std::abs(fd_pdf - mixture_pdf(mix, qv)));
            const double fd_loss =
                (mixture_qloss(mix, qv + h, tau) - mixture_qloss(mix, qv - h, tau)) /
                (2 * h);
            worst_deriv = std::max(
                worst_deriv, std::abs(fd_loss - (mixture_cdf(mix, qv) - tau)));
        }
        // Closed form vs a large Monte Carlo draw from the same mixture.
        const double q_mc = -4.0 + 8.0 * rng.uniform();
        SplitRng draw(seed, 0xD0AA);
        const std::size_t n = 1000000;
        double acc = 0.0, acc2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double u = draw.uniform();
            double cum = 0.0;
            const GaussComp* pick = &mix.back();
            for (const GaussComp& c : mix) {
                cum += c.w;
                if (u < cum) {
                    pick = &c;
                    break;
                }
            }
            const double y = pick->mu + pick->sigma * draw.normal();
            const double rho = quantile_loss(y - q_mc, tau);
            acc += rho;
            acc2 += rho * rho;
        }
        const double mc = acc / static_cast<double>(n);
        const double se = std::sqrt(
            (acc2 / static_cast<double>(n) - mc * mc) / static_cast<double>(n));
        const double z = std::abs(mixture_qloss(mix, q_mc, tau) - mc) / se;
        worst_z = std::max(worst_z, z);
        if (z > 3.0) ++mc_over_3se;
    }
    log.require(monotone, "CDF not monotone");
    log.require(bounded, "CDF escapes [0,1]");
    log.require(worst_pdf <= 1e-4, fmt("max |dCDF/dq - pdf| = %.2e", worst_pdf));
    log.require(worst_deriv <= 1e-4,
                fmt("max |dLoss/dq - (CDF - tau)| = %.2e", worst_deriv));
    // 50 independent 3-sigma comparisons: allow the expected rare
    // exceedance but nothing beyond 4 sigma (family-wise ~0.3%).
    log.require(mc_over_3se <= 2 && worst_z <= 4.0,
                fmt("MC oracle: %.0f/50 mixtures beyond 3 SE, worst z=%.2f",
                    static_cast<double>(mc_over_3se), worst_z));
}

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("criterion7 reproducible documents") {
    CriterionLog log("criterion 7 (byte-identical documents)");
    const char* cli = std::getenv("LONGQTE_CLI");
    REQUIRE_MESSAGE(cli != nullptr, "LONGQTE_CLI must point at the binary");
    const auto dir = std::filesystem::temp_directory_path() / "longqte_accept";
    std::filesystem::create_directories(dir);
    const auto csv = dir / "sample.csv";
    {
        const Dataset data = generate(150, 600, NoiseSpec::gaussian(), 77);
        std::ofstream out(csv);
        save_dataset(data, out);
    }
    auto run_twice = [&](const std::string& args, const std::string& stem) {
        const auto out1 = dir / (stem + "_1");
        const auto out2 = dir / (stem + "_2");
        for (const auto& out : {out1, out2}) {
            const std::string cmd = std::string(cli) + " " + args + " --out " +
                                    out.string() + " > /dev/null";
            const int rc = std::system(cmd.c_str());
            log.require(rc == 0, stem + " run exited nonzero");
        }
        log.require(!slurp(out1).empty(), stem + " produced an empty document");
        log.require(slurp(out1) == slurp(out2), stem + " documents differ");
    };
    run_twice("estimate --input " + csv.string() +
                  " --tau 0.5 --folds 3 --seed 7 --draws 20 --components 2",
              "estimate");
    run_twice("estimate --input " + csv.string() +
                  " --tau 0.5 --folds 3 --seed 7 --draws 20 --components 2 "
                  "--format csv",
              "estimate_csv");
    run_twice("oracle --noise t --kappa 5 --oracle-draws 100000 --seed 3", "oracle");
    run_twice(
        "simulate --n-rct 80 --reps 2 --folds 2 --draws 10 --components 1 --tau 0.5",
        "simulate");
}
