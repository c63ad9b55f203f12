#pragma once

// Core model data: parameters (lambda, sigma), wavenumbers k_n = lambda^n,
// weighted H^s norms and the closed-form stationary second-moment profile.
//
// Index convention used across the whole library: modes and chain states are
// numbered n = 1..N as in the usual shell-model notation; a StateVector of
// length N stores mode n at offset n-1. Functions taking a mode/state index
// take the 1-based one.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dyadic {

using StateVector = std::vector<double>;
using MomentVector = std::vector<double>;

struct ModelParams {
    double lambda = 2.0;  // spacing ratio, > 1
    double sigma = 1.0;   // forcing amplitude, >= 0

    ModelParams() = default;
    ModelParams(double lambda_, double sigma_) : lambda(lambda_), sigma(sigma_) {
        if (!(lambda > 1.0))
            throw std::invalid_argument("ModelParams: lambda must be > 1, got " +
                                        std::to_string(lambda_));
        if (!(sigma >= 0.0))
            throw std::invalid_argument("ModelParams: sigma must be >= 0, got " +
                                        std::to_string(sigma_));
    }
};

enum class Boundary { conservative, absorbing };

inline const char* to_string(Boundary b) {
    return b == Boundary::conservative ? "conservative" : "absorbing";
}

struct TruncationSpec {
    int n_modes = 16;
    Boundary boundary = Boundary::conservative;

    TruncationSpec() = default;
    TruncationSpec(int n, Boundary b) : n_modes(n), boundary(b) {
        if (n_modes < 3)
            throw std::invalid_argument("TruncationSpec: n_modes must be >= 3, got " +
                                        std::to_string(n));
    }
};

struct SobolevIndex {
    double s = 0.0;
};

namespace detail {
// lambda^e with an overflow guard; e may be fractional (used for k_n^{2s}).
inline double pow_lambda(double lambda, double exponent, const std::string& what) {
    const double log_mag = exponent * std::log(lambda);
    if (log_mag > 700.0)
        throw std::range_error("overflow computing " + what + ": lambda^" +
                               std::to_string(exponent) + " exceeds double range");
    return std::exp(log_mag);
}
}  // namespace detail

// k_n = lambda^n, n >= 0 (k_0 = 1 multiplies the forcing term).
inline double wavenumber(int n, const ModelParams& p) {
    if (n < 0) throw std::invalid_argument("wavenumber: n must be >= 0");
    // guard on lambda^{2n}: k_n is only ever used through k_n^2 elsewhere
    if (2.0 * n * std::log(p.lambda) > 700.0)
        throw std::range_error("wavenumber: lambda^{2n} overflows at n = " + std::to_string(n));
    return std::pow(p.lambda, n);
}

inline double wavenumber_sq(int n, const ModelParams& p) {
    const double k = wavenumber(n, p);
    return k * k;
}

inline void validate_state(std::span<const double> x, const TruncationSpec& trunc) {
    if (static_cast<int>(x.size()) != trunc.n_modes)
        throw std::invalid_argument("StateVector length " + std::to_string(x.size()) +
                                    " != n_modes " + std::to_string(trunc.n_modes));
    for (double v : x)
        if (!std::isfinite(v)) throw std::invalid_argument("StateVector has non-finite entry");
}

// (sum_{n=1..N} k_n^{2s} x_n^2)^{1/2}; s = 0 is the plain l2 norm.
inline double sobolev_norm(std::span<const double> x, SobolevIndex s, const ModelParams& p) {
    const double two_s_log_lambda = 2.0 * s.s * std::log(p.lambda);
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const int n = static_cast<int>(i) + 1;
        const double e = n * two_s_log_lambda;
        if (e > 700.0)
            throw std::range_error("sobolev_norm: k_n^{2s} overflows at n = " + std::to_string(n));
        acc += std::exp(e) * x[i] * x[i];
        if (!std::isfinite(acc)) throw std::range_error("sobolev_norm: sum overflowed");
    }
    return std::sqrt(acc);
}

inline double l2_norm(std::span<const double> x, const ModelParams& p) {
    return sobolev_norm(x, SobolevIndex{0.0}, p);
}

// Stationary second moments of the forced system: s_n = sigma^2 lambda^{-2n} / (1 - lambda^{-2}).
inline MomentVector stationary_second_moments(const ModelParams& p, int n_modes) {
    if (n_modes < 1) throw std::invalid_argument("stationary_second_moments: n_modes must be >= 1");
    const double lam2inv = 1.0 / (p.lambda * p.lambda);
    const double pref = p.sigma * p.sigma / (1.0 - lam2inv);
    MomentVector s(static_cast<std::size_t>(n_modes));
    double g = 1.0;
    for (int n = 1; n <= n_modes; ++n) {
        g *= lam2inv;
        s[static_cast<std::size_t>(n - 1)] = pref * g;
    }
    return s;
}

}  // namespace dyadic
