#pragma once

// Two-sample data model: units carrying (G, T, X, S, Y-optional), CSV
// ingestion/output, and stratified K-fold partitioning.

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "longqte/rng.hpp"

namespace longqte {

class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct QuantileLevel {
    double tau;
    explicit QuantileLevel(double t) : tau(t) {
        if (!(t > 0.0 && t < 1.0)) {
            throw ValidationError("quantile level must lie in (0,1)");
        }
    }
};

// One observation. y is present exactly when g == 0 (observational sample).
struct Unit {
    int g = 0;
    int t = 0;
    std::vector<double> x;
    std::vector<double> s;
    std::optional<double> y;
};

class Dataset {
public:
    Dataset(std::vector<Unit> units, std::size_t d_x, std::size_t d_s)
        : units_(std::move(units)), d_x_(d_x), d_s_(d_s) {
        std::array<std::size_t, 4> cell{0, 0, 0, 0};
        for (std::size_t i = 0; i < units_.size(); ++i) {
            const Unit& u = units_[i];
            if ((u.g != 0 && u.g != 1) || (u.t != 0 && u.t != 1)) {
                throw ValidationError("unit " + std::to_string(i) +
                                      ": g and t must be 0 or 1");
            }
            if (u.x.size() != d_x_ || u.s.size() != d_s_) {
                throw ValidationError("unit " + std::to_string(i) +
                                      ": covariate/surrogate dimension mismatch");
            }
            if (u.y.has_value() != (u.g == 0)) {
                throw ValidationError("unit " + std::to_string(i) +
                                      ": y must be present iff g = 0");
            }
            cell[static_cast<std::size_t>(2 * u.g + u.t)]++;
            if (u.g == 0) ++n0_; else ++n1_;
        }
        if (n0_ == 0 || n1_ == 0) {
            throw ValidationError("both samples (g=0 and g=1) must be nonempty");
        }
        for (int g = 0; g < 2; ++g) {
            for (int t = 0; t < 2; ++t) {
                if (cell[static_cast<std::size_t>(2 * g + t)] == 0) {
                    throw ValidationError("empty cell (g=" + std::to_string(g) +
                                          ",t=" + std::to_string(t) + ")");
                }
            }
        }
    }

    const std::vector<Unit>& units() const { return units_; }
    const Unit& unit(std::size_t i) const { return units_[i]; }
    std::size_t size() const { return units_.size(); }
    std::size_t d_x() const { return d_x_; }
    std::size_t d_s() const { return d_s_; }
    std::size_t n0() const { return n0_; }
    std::size_t n1() const { return n1_; }

    // Plug-in estimate of Pr(G=1).
    double nu_hat() const {
        return static_cast<double>(n1_) / static_cast<double>(size());
    }

    std::size_t cell_count(int g, int t) const {
        std::size_t c = 0;
        for (const Unit& u : units_) c += (u.g == g && u.t == t) ? 1 : 0;
        return c;
    }

private:
    std::vector<Unit> units_;
    std::size_t d_x_;
    std::size_t d_s_;
    std::size_t n0_ = 0;
    std::size_t n1_ = 0;
};

// Column-name mapping for CSV ingestion. x_cols/s_cols empty means
// "collect columns named <x_prefix>1..d / <s_prefix>1..d from the header".
struct CsvSchema {
    std::string g = "g";
    std::string t = "t";
    std::string y = "y";
    std::vector<std::string> x_cols;  // explicit list, optional
    std::vector<std::string> s_cols;  // explicit list, optional
    std::string x_prefix = "x";
    std::string s_prefix = "s";
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_double(const std::string& tok, std::size_t row,
                           const std::string& col) {
    double v = 0.0;
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
        throw ParseError("row " + std::to_string(row) + ", column '" + col +
                         "': cannot parse value '" + tok + "'");
    }
    return v;
}

inline bool is_missing(const std::string& tok) {
    return tok.empty() || tok == "NA";
}

// Shortest round-trip decimal representation.
inline std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

}  // namespace detail

inline Dataset load_dataset(std::istream& in, const CsvSchema& schema = {}) {
    std::string line;
    if (!std::getline(in, line)) {
        throw ParseError("empty input: header row required");
    }
    const std::vector<std::string> header = detail::split_csv_line(line);
    auto col_index = [&](const std::string& name) -> std::size_t {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) {
            throw ValidationError("column '" + name + "' not found in header");
        }
        return static_cast<std::size_t>(it - header.begin());
    };

    auto prefixed = [&](const std::string& prefix) {
        // Collect prefix1, prefix2, ... in numeric order.
        std::vector<std::string> cols;
        for (std::size_t d = 1;; ++d) {
            const std::string name = prefix + std::to_string(d);
            if (std::find(header.begin(), header.end(), name) == header.end()) break;
            cols.push_back(name);
        }
        return cols;
    };

    const std::size_t gi = col_index(schema.g);
    const std::size_t ti = col_index(schema.t);
    const std::size_t yi = col_index(schema.y);
    std::vector<std::string> x_cols =
        schema.x_cols.empty() ? prefixed(schema.x_prefix) : schema.x_cols;
    std::vector<std::string> s_cols =
        schema.s_cols.empty() ? prefixed(schema.s_prefix) : schema.s_cols;
    if (x_cols.empty()) throw ValidationError("no covariate (x) columns resolved");
    if (s_cols.empty()) throw ValidationError("no surrogate (s) columns resolved");
    std::vector<std::size_t> xi, si;
    for (const auto& c : x_cols) xi.push_back(col_index(c));
    for (const auto& c : s_cols) si.push_back(col_index(c));

    std::vector<Unit> units;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const std::vector<std::string> tok = detail::split_csv_line(line);
        if (tok.size() != header.size()) {
            throw ParseError("row " + std::to_string(row) + ": expected " +
                             std::to_string(header.size()) + " fields, got " +
                             std::to_string(tok.size()));
        }
        Unit u;
        const double gv = detail::parse_double(tok[gi], row, schema.g);
        const double tv = detail::parse_double(tok[ti], row, schema.t);
        u.g = static_cast<int>(gv);
        u.t = static_cast<int>(tv);
        if ((gv != 0.0 && gv != 1.0) || (tv != 0.0 && tv != 1.0)) {
            throw ParseError("row " + std::to_string(row) +
                             ": g and t must be 0 or 1");
        }
        for (std::size_t d = 0; d < xi.size(); ++d) {
            u.x.push_back(detail::parse_double(tok[xi[d]], row, x_cols[d]));
        }
        for (std::size_t d = 0; d < si.size(); ++d) {
            u.s.push_back(detail::parse_double(tok[si[d]], row, s_cols[d]));
        }
        if (detail::is_missing(tok[yi])) {
            if (u.g == 0) {
                throw ValidationError("row " + std::to_string(row) +
                                      ": g=0 unit is missing y");
            }
        } else {
            if (u.g == 1) {
                throw ValidationError("row " + std::to_string(row) +
                                      ": g=1 unit carries y");
            }
            u.y = detail::parse_double(tok[yi], row, schema.y);
        }
        units.push_back(std::move(u));
    }
    return Dataset(std::move(units), xi.size(), si.size());
}

inline Dataset load_dataset(const std::string& path, const CsvSchema& schema = {}) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open input file: " + path);
    return load_dataset(in, schema);
}

inline void save_dataset(const Dataset& data, std::ostream& out,
                         const CsvSchema& schema = {}) {
    out << schema.g << ',' << schema.t;
    for (std::size_t d = 1; d <= data.d_x(); ++d) out << ',' << schema.x_prefix << d;
    for (std::size_t d = 1; d <= data.d_s(); ++d) out << ',' << schema.s_prefix << d;
    out << ',' << schema.y << '\n';
    for (const Unit& u : data.units()) {
        out << u.g << ',' << u.t;
        for (double v : u.x) out << ',' << detail::format_double(v);
        for (double v : u.s) out << ',' << detail::format_double(v);
        out << ',' << (u.y ? detail::format_double(*u.y) : std::string("NA"));
        out << '\n';
    }
}

// Stratified K-fold partition: fold sizes within each (g,t) cell differ
// by at most one, assignments deterministic given the seed.
struct FoldPlan {
    int k = 0;
    std::vector<int> assignment;
    std::uint64_t seed = 0;
    int k_requested = 0;
    std::string warning;  // nonempty when k was reduced

    std::size_t fold_size(int fold) const {
        std::size_t n = 0;
        for (int a : assignment) n += (a == fold) ? 1 : 0;
        return n;
    }
};

inline FoldPlan make_folds(const Dataset& data, int k, std::uint64_t seed) {
    if (k < 2) throw ValidationError("make_folds: k must be >= 2");
    std::size_t min_cell = data.size();
    for (int g = 0; g < 2; ++g) {
        for (int t = 0; t < 2; ++t) {
            min_cell = std::min(min_cell, data.cell_count(g, t));
        }
    }
    if (min_cell < 2) {
        throw ValidationError(
            "make_folds: every (g,t) cell needs at least 2 units");
    }
    FoldPlan plan;
    plan.k_requested = k;
    if (static_cast<std::size_t>(k) > min_cell) {
        const int reduced = std::max<int>(2, static_cast<int>(min_cell));
        plan.warning = "fold count reduced from " + std::to_string(k) + " to " +
                       std::to_string(reduced) +
                       " (smallest (g,t) cell has " + std::to_string(min_cell) +
                       " units)";
        k = reduced;
    }
    plan.k = k;
    plan.seed = seed;
    plan.assignment.assign(data.size(), -1);
    for (int g = 0; g < 2; ++g) {
        for (int t = 0; t < 2; ++t) {
            std::vector<std::size_t> idx;
            for (std::size_t i = 0; i < data.size(); ++i) {
                const Unit& u = data.unit(i);
                if (u.g == g && u.t == t) idx.push_back(i);
            }
            SplitRng rng(seed, 0xF01D5ULL, static_cast<std::uint64_t>(2 * g + t));
            for (std::size_t i = idx.size(); i > 1; --i) {
                std::swap(idx[i - 1], idx[rng.below(i)]);
            }
            for (std::size_t i = 0; i < idx.size(); ++i) {
                plan.assignment[idx[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
            }
        }
    }
    return plan;
}

}  // namespace longqte
