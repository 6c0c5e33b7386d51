#pragma once

// Counter-based random number generation and normal-distribution helpers.
//
// Streams are addressed by a 64-bit key derived from (seed, stream ids),
// so disjoint streams can be drawn independently and in parallel without
// shared state. Each draw is a pure function of (key, counter).

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>

namespace longqte {

namespace detail {

// SplitMix64 output function (Stafford mix13).
inline std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
}

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

}  // namespace detail

// Inverse standard-normal CDF, Wichura's AS 241 (PPND16). Absolute error
// below 1e-15 over (0,1).
inline double inverse_normal_cdf(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw std::domain_error("inverse_normal_cdf: p must be in (0,1)");
    }
    const double q = p - 0.5;
    if (std::fabs(q) <= 0.425) {
        const double r = 0.180625 - q * q;
        return q *
               (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                     6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
                   1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
                 1.3314166789178437745e2) * r + 3.3871328727963666080e0) /
               (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                     3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
                   5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
                 4.2313330701600911252e1) * r + 1.0);
    }
    double r = (q < 0.0) ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double val;
    if (r <= 5.0) {
        r -= 1.6;
        val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                    2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
                  3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
                4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
              (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                    1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                  6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
                2.05319162663775882187e0) * r + 1.0);
    } else {
        r -= 5.0;
        val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                    1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                  2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
                5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
              (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                    1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
                  1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
                5.99832206555887937690e-1) * r + 1.0);
    }
    return (q < 0.0) ? -val : val;
}

inline double normal_pdf(double z) {
    static const double inv_sqrt_2pi = 0.3989422804014326779;
    return inv_sqrt_2pi * std::exp(-0.5 * z * z);
}

inline double normal_cdf(double z) {
    return 0.5 * std::erfc(-z * 0.7071067811865475244);
}

// Splittable counter-based generator. A stream is identified by up to
// three ids hashed together with the seed; draws at position i are
// SplitMix64 outputs at that position, independent of call history.
class SplitRng {
public:
    explicit SplitRng(std::uint64_t seed, std::uint64_t id1 = 0,
                      std::uint64_t id2 = 0, std::uint64_t id3 = 0) {
        std::uint64_t k = detail::mix64(seed + detail::kGolden);
        k = detail::mix64(k ^ detail::mix64(id1 + detail::kGolden));
        k = detail::mix64(k ^ detail::mix64(id2 + 2 * detail::kGolden));
        k = detail::mix64(k ^ detail::mix64(id3 + 3 * detail::kGolden));
        key_ = k;
    }

    std::uint64_t next_u64() {
        return detail::mix64(key_ + (counter_++) * detail::kGolden);
    }

    // Uniform on (0,1), never exactly 0 or 1.
    double uniform() {
        const double u = (next_u64() >> 11) * 0x1.0p-53;
        return u > 0.0 ? u : 0x1.0p-54;
    }

    double normal() { return inverse_normal_cdf(uniform()); }

    // Bernoulli(p).
    bool bernoulli(double p) { return uniform() < p; }

    // Student-t with integer dof via the ratio Z / sqrt(chi2_k / k);
    // chi2 built from k squared normals so streams are platform-stable.
    double student_t(int dof) {
        const double z = normal();
        double chi2 = 0.0;
        for (int i = 0; i < dof; ++i) {
            const double g = normal();
            chi2 += g * g;
        }
        return z / std::sqrt(chi2 / static_cast<double>(dof));
    }

    // Integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Lemire-style rejection-free enough for shuffles at our scales.
        return next_u64() % n;
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace longqte
