#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "longqte/simulation.hpp"

using namespace longqte;

TEST_SUITE("simulation") {

TEST_CASE("generated samples have the declared shape") {
    const Dataset data = generate(500, 2500, NoiseSpec::gaussian(), 1);
    CHECK(data.size() == 3000);
    CHECK(data.n1() == 500);
    CHECK(data.nu_hat() == doctest::Approx(1.0 / 6.0));
    std::size_t treated = 0;
    for (const Unit& u : data.units()) {
        CHECK(u.y.has_value() == (u.g == 0));
        if (u.g == 1) treated += static_cast<std::size_t>(u.t);
    }
    // Fair-coin assignment in the experimental sample.
    CHECK(static_cast<double>(treated) / 500.0 == doctest::Approx(0.5).epsilon(0.15));
}

TEST_CASE("observed outcomes follow the structural equation") {
    // Regress Y on (T, X1, X2, S) over the observational sample: the
    // generating equation fixes the coefficients at (1, 3, 3, 1).
    const Dataset data = generate(200, 60000, NoiseSpec::gaussian(), 5);
    Eigen::MatrixXd Z(data.n0(), 5);
    Eigen::VectorXd Y(data.n0());
    Eigen::Index r = 0;
    for (const Unit& u : data.units()) {
        if (u.g != 0) continue;
        Z.row(r) << 1.0, static_cast<double>(u.t), u.x[0], u.x[1], u.s[0];
        Y(r) = *u.y;
        ++r;
    }
    const Eigen::VectorXd beta = (Z.transpose() * Z).ldlt().solve(Z.transpose() * Y);
    CHECK(std::abs(beta(0)) < 0.05);
    CHECK(beta(1) == doctest::Approx(1.0).epsilon(0.05));
    CHECK(beta(2) == doctest::Approx(3.0).epsilon(0.02));
    CHECK(beta(3) == doctest::Approx(3.0).epsilon(0.02));
    CHECK(beta(4) == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("noise laws are standardized") {
    // Scaled-t draws have unit variance for kappa >= 5 (kappa = 3 has an
    // infinite fourth moment, so check a quantile instead).
    for (int kappa : {5, 7, 9}) {
        NoiseSpec law = NoiseSpec::scaled_t(kappa);
        SplitRng rng(100 + static_cast<std::uint64_t>(kappa), 1);
        const std::size_t n = 1000000;
        double acc = 0.0, acc2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double v = law.draw(rng);
            acc += v;
            acc2 += v * v;
        }
        CHECK(acc / n == doctest::Approx(0.0).scale(1.0).epsilon(0.01));
        CHECK(acc2 / n - (acc / n) * (acc / n) == doctest::Approx(1.0).epsilon(0.03));
    }
    {
        // t(3) scaled by sqrt(1/3): 75th percentile = 0.764892 / sqrt(3).
        NoiseSpec law = NoiseSpec::scaled_t(3);
        SplitRng rng(103, 1);
        std::vector<double> v(200000);
        for (double& x : v) x = law.draw(rng);
        std::nth_element(v.begin(), v.begin() + 150000, v.end());
        CHECK(v[150000] == doctest::Approx(0.764892 / std::sqrt(3.0)).epsilon(0.02));
    }
    CHECK(NoiseSpec::scaled_t(3).name() == "t3");
    CHECK(NoiseSpec::gaussian().name() == "gaussian");
    CHECK_THROWS_AS(NoiseSpec::scaled_t(2), ValidationError);
}

TEST_CASE("oracle effect converges to the location shift") {
    const auto d = oracle_true_qte(NoiseSpec::gaussian(), {0.25, 0.5, 0.75}, 200000, 3);
    REQUIRE(d.size() == 3);
    for (double v : d) CHECK(v == doctest::Approx(2.0).epsilon(0.1));
    const auto e = oracle_true_qte(NoiseSpec::gaussian(), {0.25, 0.5, 0.75}, 200000, 3);
    CHECK(d == e);
    CHECK_THROWS_AS(oracle_true_qte(NoiseSpec::gaussian(), {0.5}, 100, 1),
                    ValidationError);
}

TEST_CASE("study reports are reproducible byte for byte") {
    SimConfig sc;
    sc.n_rct = 120;
    sc.n_obs = 480;
    sc.noise = NoiseSpec::scaled_t(5);
    sc.taus = {0.5};
    sc.k_folds = 2;
    sc.n_reps = 2;
    sc.base_seed = 9;
    sc.estimate.bundle.r_draws = 10;
    sc.estimate.bundle.outcome_components = 1;
    sc.estimate.bundle.surrogate_components = 1;
    const SimReport a = run_study(sc);
    const SimReport b = run_study(sc);
    REQUIRE(a.cells.size() == 1);
    CHECK(a.cells[0].failures == 0);
    CHECK(a.cells[0].n_reps == 2);
    CHECK(report_to_csv(a) == report_to_csv(b));
    CHECK(report_to_csv(a).find("t5") != std::string::npos);
}

}  // TEST_SUITE
