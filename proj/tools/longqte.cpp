// Command-line front end: QTE estimation from CSV files, QTE curves,
// Monte Carlo simulation studies, and ground-truth oracle computation.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "longqte/qte.hpp"
#include "longqte/simulation.hpp"

namespace {

using nlohmann::json;

// Temp-file-plus-rename so interrupted runs never leave truncated output.
void write_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw longqte::ValidationError("cannot write to " + tmp);
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

longqte::CsvSchema parse_schema(const std::string& spec) {
    longqte::CsvSchema schema;
    if (spec.empty()) return schema;
    std::istringstream in(spec);
    std::string entry;
    while (std::getline(in, entry, ',')) {
        const auto eq = entry.find('=');
        if (eq == std::string::npos) {
            throw longqte::ValidationError("schema entry '" + entry +
                                           "' is not key=value");
        }
        const std::string key = entry.substr(0, eq);
        const std::string val = entry.substr(eq + 1);
        auto split_list = [](const std::string& v) {
            std::vector<std::string> out;
            std::istringstream s(v);
            std::string tok;
            while (std::getline(s, tok, ':')) out.push_back(tok);
            return out;
        };
        if (key == "g") schema.g = val;
        else if (key == "t") schema.t = val;
        else if (key == "y") schema.y = val;
        else if (key == "x") schema.x_cols = split_list(val);
        else if (key == "s") schema.s_cols = split_list(val);
        else throw longqte::ValidationError("unknown schema key '" + key + "'");
    }
    return schema;
}

struct CommonOpts {
    std::string input;
    std::string schema;
    std::vector<double> taus;
    int folds = 5;
    std::uint64_t seed = 1;
    double clip = 0.01;
    int components = 3;
    int draws = 200;
    std::string out;
    std::string format = "json";
};

longqte::EstimateConfig make_estimate_config(const CommonOpts& o) {
    longqte::EstimateConfig ec;
    ec.seed = o.seed;
    ec.bundle.clip = o.clip;
    ec.bundle.outcome_components = o.components;
    ec.bundle.r_draws = o.draws;
    return ec;
}

json config_echo(const CommonOpts& o) {
    return {{"input", o.input},   {"schema", o.schema}, {"taus", o.taus},
            {"folds", o.folds},   {"seed", o.seed},     {"clip", o.clip},
            {"components", o.components},               {"draws", o.draws},
            {"format", o.format}};
}

std::string estimates_to_json(const std::vector<longqte::QteEstimate>& ests,
                              const CommonOpts& o, int k_used) {
    json doc;
    doc["config"] = config_echo(o);
    doc["k"] = k_used;
    json rows = json::array();
    for (const auto& e : ests) {
        rows.push_back({{"tau", e.tau},
                        {"q1", e.q1_hat},
                        {"q0", e.q0_hat},
                        {"delta", e.delta_hat},
                        {"var", e.v_hat},
                        {"ese", e.ese},
                        {"ci_low", e.ci_low},
                        {"ci_high", e.ci_high},
                        {"j1", e.j1_hat},
                        {"j0", e.j0_hat},
                        {"n", e.n}});
    }
    doc["estimates"] = rows;
    return doc.dump(2) + "\n";
}

std::string estimates_to_csv(const std::vector<longqte::QteEstimate>& ests,
                             const CommonOpts& o) {
    std::ostringstream out;
    const json echo = config_echo(o);
    for (auto it = echo.begin(); it != echo.end(); ++it) {
        out << "# " << it.key() << "=" << it.value().dump() << "\n";
    }
    out << "tau,q1,q0,delta,ese,ci_low,ci_high,j1,j0\n";
    using longqte::detail::format_double;
    for (const auto& e : ests) {
        out << format_double(e.tau) << ',' << format_double(e.q1_hat) << ','
            << format_double(e.q0_hat) << ',' << format_double(e.delta_hat) << ','
            << format_double(e.ese) << ',' << format_double(e.ci_low) << ','
            << format_double(e.ci_high) << ',' << format_double(e.j1_hat) << ','
            << format_double(e.j0_hat) << '\n';
    }
    return out.str();
}

void emit(const std::string& content, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << content;
    } else {
        write_atomic(out_path, content);
    }
}

int cmd_estimate(const CommonOpts& o) {
    const longqte::Dataset data =
        longqte::load_dataset(o.input, parse_schema(o.schema));
    std::vector<longqte::QuantileLevel> taus;
    for (double t : o.taus.empty() ? std::vector<double>{0.25, 0.5, 0.75} : o.taus) {
        taus.emplace_back(t);
    }
    const auto ests =
        longqte::estimate_qte(data, o.folds, taus, make_estimate_config(o));
    CommonOpts echo = o;
    if (echo.taus.empty()) echo.taus = {0.25, 0.5, 0.75};
    emit(o.format == "csv" ? estimates_to_csv(ests, echo)
                           : estimates_to_json(ests, echo, o.folds),
         o.out);
    return 0;
}

int cmd_curve(const CommonOpts& o, double tau_lo, double tau_hi, double tau_step) {
    if (!(tau_lo > 0.0 && tau_hi < 1.0 && tau_lo <= tau_hi && tau_step > 0.0)) {
        throw longqte::ValidationError("curve: tau grid must lie inside (0,1)");
    }
    const longqte::Dataset data =
        longqte::load_dataset(o.input, parse_schema(o.schema));
    std::vector<longqte::QuantileLevel> taus;
    for (double t = tau_lo; t <= tau_hi + 1e-12; t += tau_step) taus.emplace_back(t);
    const auto ests =
        longqte::estimate_qte(data, o.folds, taus, make_estimate_config(o));
    std::ostringstream csv;
    const json echo = config_echo(o);
    for (auto it = echo.begin(); it != echo.end(); ++it) {
        csv << "# " << it.key() << "=" << it.value().dump() << "\n";
    }
    csv << "tau,delta,ci_low,ci_high\n";
    using longqte::detail::format_double;
    for (const auto& e : ests) {
        csv << format_double(e.tau) << ',' << format_double(e.delta_hat) << ','
            << format_double(e.ci_low) << ',' << format_double(e.ci_high) << '\n';
    }
    emit(csv.str(), o.out);
    return 0;
}

longqte::NoiseSpec make_noise(const std::string& name, int kappa) {
    if (name == "gaussian") return longqte::NoiseSpec::gaussian();
    if (name == "t" || name == "scaled_t") return longqte::NoiseSpec::scaled_t(kappa);
    throw longqte::ValidationError("unknown noise law '" + name +
                                   "' (expected gaussian or t)");
}

int cmd_simulate(const CommonOpts& o, const std::string& noise, int kappa,
                 std::size_t n_rct, std::size_t n_obs, int reps, bool full) {
    std::vector<longqte::SimConfig> runs;
    if (full) {
        // The complete study grid: all noise laws, all sample sizes.
        for (const std::string& nm : {"t3", "t5", "t7", "t9", "gaussian"}) {
            for (std::size_t n : {std::size_t(500), std::size_t(1000), std::size_t(2000)}) {
                longqte::SimConfig sc;
                sc.noise = nm == "gaussian"
                               ? longqte::NoiseSpec::gaussian()
                               : longqte::NoiseSpec::scaled_t(nm[1] - '0');
                sc.n_rct = n;
                sc.n_reps = 1000;
                sc.base_seed = o.seed;
                sc.k_folds = o.folds;
                sc.estimate = make_estimate_config(o);
                runs.push_back(sc);
            }
        }
    } else {
        longqte::SimConfig sc;
        sc.noise = make_noise(noise, kappa);
        sc.n_rct = n_rct;
        sc.n_obs = n_obs;
        sc.n_reps = reps;
        sc.base_seed = o.seed;
        sc.k_folds = o.folds;
        if (!o.taus.empty()) sc.taus = o.taus;
        sc.estimate = make_estimate_config(o);
        runs.push_back(sc);
    }
    longqte::SimReport merged;
    int failures = 0;
    for (const auto& sc : runs) {
        const longqte::SimReport r = longqte::run_study(sc);
        std::cout << longqte::report_to_table(r);
        std::cout << "# wall time " << r.wall_time_s << "s\n";
        for (const auto& c : r.cells) {
            failures += c.failures;
            merged.cells.push_back(c);
        }
    }
    emit(longqte::report_to_csv(merged), o.out);
    if (failures > 0) {
        std::cerr << "error: " << failures << " replication(s) failed\n";
        return 3;
    }
    return 0;
}

int cmd_oracle(const CommonOpts& o, const std::string& noise, int kappa,
               std::size_t n_draws) {
    const std::vector<double> taus =
        o.taus.empty() ? std::vector<double>{0.25, 0.5, 0.75} : o.taus;
    std::vector<longqte::NoiseSpec> laws;
    if (noise == "all") {
        laws = {longqte::NoiseSpec::scaled_t(3), longqte::NoiseSpec::scaled_t(5),
                longqte::NoiseSpec::scaled_t(7), longqte::NoiseSpec::scaled_t(9),
                longqte::NoiseSpec::gaussian()};
    } else {
        laws = {make_noise(noise, kappa)};
    }
    std::ostringstream csv;
    csv << "# draws=" << n_draws << " seed=" << o.seed << "\n";
    csv << "noise,tau,delta\n";
    for (const auto& law : laws) {
        const auto deltas = longqte::oracle_true_qte(law, taus, n_draws, o.seed);
        for (std::size_t i = 0; i < taus.size(); ++i) {
            const std::string line = law.name() + "," +
                                     longqte::detail::format_double(taus[i]) + "," +
                                     longqte::detail::format_double(deltas[i]);
            csv << line << "\n";
            std::cout << line << "\n";
        }
    }
    if (!o.out.empty()) write_atomic(o.out, csv.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Long-term quantile treatment effect estimation"};
    app.require_subcommand(1);
    app.set_config("--config");

    CommonOpts o;
    std::string noise = "gaussian";
    int kappa = 3;
    std::size_t n_rct = 500, n_obs = 0, n_draws = 10000000;
    int reps = 200;
    bool full = false;
    double tau_lo = 0.05, tau_hi = 0.95, tau_step = 0.05;

    auto add_common = [&](CLI::App* cmd, bool needs_input) {
        if (needs_input) {
            cmd->add_option("--input", o.input, "input CSV path")->required();
            cmd->add_option("--schema", o.schema,
                            "column mapping, e.g. g=grp,t=arm,y=out,x=x1:x2,s=s1");
        }
        cmd->add_option("--tau", o.taus, "quantile level (repeatable)");
        cmd->add_option("--folds", o.folds, "cross-fitting folds")->check(CLI::Range(2, 100));
        cmd->add_option("--seed", o.seed, "RNG seed");
        cmd->add_option("--clip", o.clip, "score clipping epsilon")
            ->check(CLI::Range(1e-6, 0.49));
        cmd->add_option("--components", o.components, "outcome mixture components")
            ->check(CLI::Range(1, 20));
        cmd->add_option("--draws", o.draws, "transport Monte Carlo draws")
            ->check(CLI::Range(1, 100000));
        cmd->add_option("--out", o.out, "output file (default stdout)");
        cmd->add_option("--format", o.format, "json or csv")
            ->check(CLI::IsMember({"json", "csv"}));
    };

    CLI::App* est = app.add_subcommand("estimate", "estimate QTE from a CSV file");
    add_common(est, true);

    CLI::App* curve = app.add_subcommand("curve", "QTE curve over a tau grid");
    add_common(curve, false);
    curve->add_option("--input", o.input, "input CSV path")->required();
    curve->add_option("--schema", o.schema, "column mapping");
    curve->add_option("--tau-lo", tau_lo, "grid start");
    curve->add_option("--tau-hi", tau_hi, "grid end");
    curve->add_option("--tau-step", tau_step, "grid step");

    CLI::App* sim = app.add_subcommand("simulate", "run a Monte Carlo study");
    add_common(sim, false);
    sim->add_option("--noise", noise, "gaussian or t");
    sim->add_option("--kappa", kappa, "t degrees of freedom")->check(CLI::Range(3, 100));
    sim->add_option("--n-rct", n_rct, "experimental sample size");
    sim->add_option("--n-obs", n_obs, "observational sample size (default 5*n_rct)");
    sim->add_option("--reps", reps, "replications");
    sim->add_flag("--full", full, "full study grid, 1000 reps (multi-hour)");

    CLI::App* orc = app.add_subcommand("oracle", "ground-truth QTE by Monte Carlo");
    add_common(orc, false);
    orc->add_option("--noise", noise, "gaussian, t, or all");
    orc->add_option("--kappa", kappa, "t degrees of freedom")->check(CLI::Range(3, 100));
    orc->add_option("--oracle-draws", n_draws, "Monte Carlo draws");

    try {
        app.parse(argc, argv);
        if (est->parsed()) return cmd_estimate(o);
        if (curve->parsed()) return cmd_curve(o, tau_lo, tau_hi, tau_step);
        if (sim->parsed()) return cmd_simulate(o, noise, kappa, n_rct, n_obs, reps, full);
        if (orc->parsed()) return cmd_oracle(o, noise, kappa, n_draws);
        return 2;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const longqte::NumericError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
