#pragma once

// The minimal jump process attached to the tridiagonal generator: exponential
// clocks with rate -Pi_{j,j}, nearest-neighbour jumps reflected at 1 with
// upward probability theta = 1/(1 + lambda^{-2}), explosion detection, and
// the closed-form facts about it (occupation times, never-visit
// probabilities, survival bound) used as oracles everywhere else.
//
// Explosion is detected by a state cap M: the expected lifetime remaining
// above M sums to (M lambda^{-2M} + lambda^{-2(M+1)}/(1-lambda^{-2})) /
// (1-lambda^{-2}), so a path entering M is declared exploded and the cap
// tail is carried as a quantified bias bound.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "dyadic/model.hpp"
#include "dyadic/parallel.hpp"
#include "dyadic/rng.hpp"

namespace dyadic {

inline constexpr int kDefaultCap = 40;
inline constexpr std::uint64_t kMaxJumpsPerPath = 1'000'000'000ull;

inline double jump_up_probability(int j, const ModelParams& p) {
    if (j < 1) throw std::invalid_argument("jump_up_probability: state must be >= 1");
    if (j == 1) return 1.0;
    return 1.0 / (1.0 + 1.0 / (p.lambda * p.lambda));
}

inline double holding_rate(int j, const ModelParams& p) {
    if (j < 1) throw std::invalid_argument("holding_rate: state must be >= 1");
    if (j == 1) return wavenumber_sq(1, p);
    return wavenumber_sq(j - 1, p) + wavenumber_sq(j, p);
}

// pi_{i,j} = P_i(never visit j) = 1 - lambda^{-2[(i-j) v 0]}.
inline double never_visit_probability(int i, int j, const ModelParams& p) {
    if (i < 1 || j < 1) throw std::invalid_argument("never_visit_probability: states must be >= 1");
    if (i <= j) return 0.0;
    return 1.0 - std::pow(p.lambda, -2.0 * (i - j));
}

// E_i(T_j) = lambda^{-2(i v j)} / (1 - lambda^{-2}).
inline double expected_occupation(int i, int j, const ModelParams& p) {
    if (i < 1 || j < 1) throw std::invalid_argument("expected_occupation: states must be >= 1");
    const double lam2inv = 1.0 / (p.lambda * p.lambda);
    return std::pow(lam2inv, std::max(i, j)) / (1.0 - lam2inv);
}

// E_i(tau) = sum_j E_i(T_j) = (i lambda^{-2i} + lambda^{-2(i+1)}/(1-lambda^{-2})) / (1-lambda^{-2}).
inline double expected_total_lifetime(int i, const ModelParams& p) {
    if (i < 1) throw std::invalid_argument("expected_total_lifetime: state must be >= 1");
    const double lam2inv = 1.0 / (p.lambda * p.lambda);
    const double g = std::pow(lam2inv, i);
    return (i * g + g * lam2inv / (1.0 - lam2inv)) / (1.0 - lam2inv);
}

inline double cap_tail_bias(int cap, const ModelParams& p) { return expected_total_lifetime(cap, p); }

// P(tau > t) <= (exp((lambda^2-1)^3 t / lambda^4) - 1)^{-1}; informative
// (< 1) once t exceeds survival_bound_threshold.
inline double survival_upper_bound(double t, const ModelParams& p) {
    if (!(t > 0.0)) throw std::invalid_argument("survival_upper_bound: t must be > 0");
    const double lam2 = p.lambda * p.lambda;
    const double rate = (lam2 - 1.0) * (lam2 - 1.0) * (lam2 - 1.0) / (lam2 * lam2);
    return 1.0 / std::expm1(rate * t);
}

inline double survival_bound_threshold(const ModelParams& p) {
    const double lam2 = p.lambda * p.lambda;
    return std::log(2.0) * lam2 * lam2 / ((lam2 - 1.0) * (lam2 - 1.0) * (lam2 - 1.0));
}

struct ChainPath {
    int start_state = 1;
    std::vector<int> visit_states;
    std::vector<double> holding_times;  // realized sojourns; the last one is
                                        // truncated when the horizon cuts it
    std::vector<double> occupation;     // occupation[j-1] = time spent in state j, j <= cap
    bool exploded = false;
    bool censored_at_cap = false;
    double explosion_time = std::numeric_limits<double>::infinity();
    double total_time = 0.0;  // simulated time (cap entry time or horizon)
};

namespace detail {

// Core walk shared by the path recorder and the statistics runners.
// visit(state, sojourn, truncated_by_horizon) is called once per sojourn;
// returns through ChainOutcome whether and when the cap was reached.
struct ChainOutcome {
    bool reached_cap = false;
    double elapsed = 0.0;
    std::uint64_t n_jumps = 0;
};

template <class Visit>
ChainOutcome walk_chain(int i0, double horizon, int cap, const ModelParams& p, std::uint64_t seed,
                        std::uint64_t path_index, Visit&& visit) {
    if (i0 < 1) throw std::invalid_argument("walk_chain: start state must be >= 1");
    if (cap <= i0) throw std::invalid_argument("walk_chain: cap must exceed the start state");
    if (!(horizon > 0.0)) throw std::invalid_argument("walk_chain: horizon must be > 0");
    const double theta = jump_up_probability(2, p);
    ChainOutcome out;
    int state = i0;
    double t = 0.0;
    for (std::uint64_t n = 0;; ++n) {
        if (n >= kMaxJumpsPerPath)
            throw std::runtime_error("walk_chain: jump budget exceeded (" +
                                     std::to_string(kMaxJumpsPerPath) + ")");
        const auto draw = rng::exponential_and_uniform(
            {seed, path_index, n, 0, rng::Domain::chain_jump}, holding_rate(state, p));
        if (t + draw.hold >= horizon) {
            visit(state, horizon - t, true);
            out.elapsed = horizon;
            out.n_jumps = n;
            return out;
        }
        visit(state, draw.hold, false);
        t += draw.hold;
        state = (state == 1) ? 2 : (draw.coin < theta ? state + 1 : state - 1);
        if (state >= cap) {
            out.reached_cap = true;
            out.elapsed = t;
            out.n_jumps = n + 1;
            return out;
        }
    }
}

// Wilson score interval, z = 1.96 (95%).
struct WilsonInterval {
    double low, high;
};
inline WilsonInterval wilson(double successes, double n, double z = 1.959963984540054) {
    const double p = successes / n;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = (p + z2 / (2.0 * n)) / denom;
    const double hw = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
    return {std::max(0.0, center - hw), std::min(1.0, center + hw)};
}

// Agresti-Coull-style standard error: stays positive at 0 or n successes so
// "within k combined SE" comparisons remain meaningful at the extremes.
inline double proportion_se(double successes, double n) {
    const double nn = n + 4.0;
    const double pp = (successes + 2.0) / nn;
    return std::sqrt(pp * (1.0 - pp) / nn);
}

}  // namespace detail

inline ChainPath simulate_chain(int i0, double horizon, int cap, const ModelParams& p,
                                std::uint64_t seed, std::uint64_t path_index) {
    ChainPath path;
    path.start_state = i0;
    path.occupation.assign(static_cast<std::size_t>(cap), 0.0);
    const auto outcome = detail::walk_chain(
        i0, horizon, cap, p, seed, path_index, [&](int state, double sojourn, bool) {
            path.visit_states.push_back(state);
            path.holding_times.push_back(sojourn);
            path.occupation[static_cast<std::size_t>(state - 1)] += sojourn;
        });
    path.total_time = outcome.elapsed;
    if (outcome.reached_cap) {
        path.exploded = true;
        path.censored_at_cap = true;
        path.explosion_time = outcome.elapsed + cap_tail_bias(cap, p);
    }
    return path;
}

struct SurvivalEstimate {
    double t = 0.0;
    double point = 0.0;      // raw fraction of paths alive at t
    double ci_low = 0.0;     // Wilson 95%
    double ci_high = 1.0;
    double half_width = 0.5;
    std::size_t n_paths = 0;
    double cap_bias_bound = 0.0;
    bool bias_warning = false;  // cap bias bound above a tenth of the half width
};

// One ensemble, evaluated on a whole time grid: a path alive at t_k is alive
// at every earlier grid point, so the curve is nonincreasing by construction.
inline std::vector<SurvivalEstimate> survival_curve(int i0, const std::vector<double>& t_grid,
                                                    const ModelParams& p, std::size_t n_paths,
                                                    std::uint64_t seed, int cap = kDefaultCap,
                                                    int n_threads = 0) {
    if (n_paths < 100) throw std::invalid_argument("survival_curve: need n_paths >= 100");
    for (double t : t_grid)
        if (!(t > 0.0)) throw std::invalid_argument("survival_curve: grid times must be > 0");
    const double t_max = *std::max_element(t_grid.begin(), t_grid.end());
    const double tail = cap_tail_bias(cap, p);

    using Counts = std::vector<std::uint64_t>;
    auto partials = par::run_blocks<Counts>(
        n_paths, [&] { return Counts(t_grid.size(), 0); },
        [&](Counts& c, std::size_t first, std::size_t last) {
            for (std::size_t path = first; path < last; ++path) {
                double death = std::numeric_limits<double>::infinity();
                const auto outcome =
                    detail::walk_chain(i0, t_max, cap, p, seed, path, [](int, double, bool) {});
                if (outcome.reached_cap) death = outcome.elapsed + tail;
                for (std::size_t k = 0; k < t_grid.size(); ++k)
                    if (death > t_grid[k]) ++c[k];
            }
        },
        n_threads);
    Counts alive = par::reduce_pairwise(std::move(partials), [](Counts& a, const Counts& b) {
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    });

    std::vector<SurvivalEstimate> out(t_grid.size());
    for (std::size_t k = 0; k < t_grid.size(); ++k) {
        SurvivalEstimate& e = out[k];
        e.t = t_grid[k];
        e.n_paths = n_paths;
        e.point = static_cast<double>(alive[k]) / static_cast<double>(n_paths);
        const auto w = detail::wilson(static_cast<double>(alive[k]), static_cast<double>(n_paths));
        e.ci_low = w.low;
        e.ci_high = w.high;
        e.half_width = 0.5 * (w.high - w.low);
        e.cap_bias_bound = tail;
        e.bias_warning = tail > 0.1 * e.half_width;
    }
    return out;
}

inline SurvivalEstimate estimate_survival(int i0, double t, const ModelParams& p,
                                          std::size_t n_paths, std::uint64_t seed,
                                          int cap = kDefaultCap, int n_threads = 0) {
    return survival_curve(i0, {t}, p, n_paths, seed, cap, n_threads).front();
}

struct TransitionEstimate {
    int from = 1, to = 1;
    double t = 0.0;
    double point = 0.0;
    double ci_low = 0.0, ci_high = 1.0;
    double se = 0.0;
    std::size_t n_paths = 0;
};

// f_{i,j}(t) estimated as the fraction of paths sitting in j at time t.
// Returns the whole row j = 1..j_max from one ensemble.
inline std::vector<TransitionEstimate> estimate_transition_row(int i, int j_max, double t,
                                                               const ModelParams& p,
                                                               std::size_t n_paths,
                                                               std::uint64_t seed,
                                                               int cap = kDefaultCap,
                                                               int n_threads = 0) {
    if (n_paths < 100) throw std::invalid_argument("estimate_transition: need n_paths >= 100");
    if (!(t > 0.0)) throw std::invalid_argument("estimate_transition: t must be > 0");
    using Counts = std::vector<std::uint64_t>;
    auto partials = par::run_blocks<Counts>(
        n_paths, [&] { return Counts(static_cast<std::size_t>(j_max), 0); },
        [&](Counts& c, std::size_t first, std::size_t last) {
            for (std::size_t path = first; path < last; ++path) {
                int state_at_t = -1;
                detail::walk_chain(i, t, cap, p, seed, path,
                                   [&](int state, double, bool truncated) {
                                       if (truncated) state_at_t = state;
                                   });
                if (state_at_t >= 1 && state_at_t <= j_max)
                    ++c[static_cast<std::size_t>(state_at_t - 1)];
            }
        },
        n_threads);
    Counts hits = par::reduce_pairwise(std::move(partials), [](Counts& a, const Counts& b) {
        for (std::size_t k = 0; k < a.size(); ++k) a[k] += b[k];
    });
    std::vector<TransitionEstimate> out(static_cast<std::size_t>(j_max));
    for (int j = 1; j <= j_max; ++j) {
        TransitionEstimate& e = out[static_cast<std::size_t>(j - 1)];
        e.from = i;
        e.to = j;
        e.t = t;
        e.n_paths = n_paths;
        const double cnt = static_cast<double>(hits[static_cast<std::size_t>(j - 1)]);
        e.point = cnt / static_cast<double>(n_paths);
        const auto w = detail::wilson(cnt, static_cast<double>(n_paths));
        e.ci_low = w.low;
        e.ci_high = w.high;
        e.se = detail::proportion_se(cnt, static_cast<double>(n_paths));
    }
    return out;
}

inline TransitionEstimate estimate_transition(int i, int j, double t, const ModelParams& p,
                                              std::size_t n_paths, std::uint64_t seed,
                                              int cap = kDefaultCap, int n_threads = 0) {
    return estimate_transition_row(i, j, t, p, n_paths, seed, cap, n_threads).back();
}

// Monte Carlo occupation / never-visit / lifetime statistics from a fixed
// start state, for states j = 1..j_max, with horizon = infinity (paths end at
// the cap).
struct OccupationGridStats {
    int start_state = 1;
    std::size_t n_paths = 0;
    std::vector<double> occupation_mean;  // [j-1]
    std::vector<double> occupation_se;
    std::vector<double> never_visit_freq;
    std::vector<double> never_visit_se;
    double lifetime_mean = 0.0;
    double lifetime_se = 0.0;
};

inline OccupationGridStats occupation_grid_stats(int i0, int j_max, const ModelParams& p,
                                                 std::size_t n_paths, std::uint64_t seed,
                                                 int cap = kDefaultCap, int n_threads = 0) {
    struct Partial {
        std::vector<double> occ_sum, occ_sum2;
        std::vector<std::uint64_t> never;
        double life_sum = 0.0, life_sum2 = 0.0;
    };
    const double inf = std::numeric_limits<double>::infinity();
    const double tail = cap_tail_bias(cap, p);
    auto partials = par::run_blocks<Partial>(
        n_paths,
        [&] {
            Partial q;
            q.occ_sum.assign(static_cast<std::size_t>(j_max), 0.0);
            q.occ_sum2.assign(static_cast<std::size_t>(j_max), 0.0);
            q.never.assign(static_cast<std::size_t>(j_max), 0);
            return q;
        },
        [&](Partial& q, std::size_t first, std::size_t last) {
            std::vector<double> occ(static_cast<std::size_t>(j_max));
            for (std::size_t path = first; path < last; ++path) {
                std::fill(occ.begin(), occ.end(), 0.0);
                const auto outcome =
                    detail::walk_chain(i0, inf, cap, p, seed, path, [&](int state, double sojourn, bool) {
                        if (state <= j_max) occ[static_cast<std::size_t>(state - 1)] += sojourn;
                    });
                const double life = outcome.elapsed + tail;
                q.life_sum += life;
                q.life_sum2 += life * life;
                for (int j = 0; j < j_max; ++j) {
                    const double v = occ[static_cast<std::size_t>(j)];
                    q.occ_sum[static_cast<std::size_t>(j)] += v;
                    q.occ_sum2[static_cast<std::size_t>(j)] += v * v;
                    if (v == 0.0) ++q.never[static_cast<std::size_t>(j)];
                }
            }
        },
        n_threads);
    Partial total = par::reduce_pairwise(std::move(partials), [](Partial& a, const Partial& b) {
        for (std::size_t k = 0; k < a.occ_sum.size(); ++k) {
            a.occ_sum[k] += b.occ_sum[k];
            a.occ_sum2[k] += b.occ_sum2[k];
            a.never[k] += b.never[k];
        }
        a.life_sum += b.life_sum;
        a.life_sum2 += b.life_sum2;
    });

    const double n = static_cast<double>(n_paths);
    OccupationGridStats out;
    out.start_state = i0;
    out.n_paths = n_paths;
    out.occupation_mean.resize(static_cast<std::size_t>(j_max));
    out.occupation_se.resize(static_cast<std::size_t>(j_max));
    out.never_visit_freq.resize(static_cast<std::size_t>(j_max));
    out.never_visit_se.resize(static_cast<std::size_t>(j_max));
    for (int j = 0; j < j_max; ++j) {
        const std::size_t k = static_cast<std::size_t>(j);
        const double mean = total.occ_sum[k] / n;
        const double var = std::max(0.0, (total.occ_sum2[k] - n * mean * mean) / (n - 1.0));
        out.occupation_mean[k] = mean;
        out.occupation_se[k] = std::sqrt(var / n);
        out.never_visit_freq[k] = static_cast<double>(total.never[k]) / n;
        out.never_visit_se[k] = detail::proportion_se(static_cast<double>(total.never[k]), n);
    }
    out.lifetime_mean = total.life_sum / n;
    const double lvar =
        std::max(0.0, (total.life_sum2 - n * out.lifetime_mean * out.lifetime_mean) / (n - 1.0));
    out.lifetime_se = std::sqrt(lvar / n);
    return out;
}

// Corollary-style law check for T_j from start state 1: the sample mean must
// match lambda^{-2j}/(1-lambda^{-2}) and variance/mean^2 - 1 must be
// statistically indistinguishable from 0 (exponential law).
struct OccupationLawReport {
    int state = 1;
    std::size_t n_paths = 0;
    double expected_mean = 0.0;
    double sample_mean = 0.0;
    double mean_se = 0.0;
    double sample_variance = 0.0;
    double diagnostic = 0.0;     // variance/mean^2 - 1
    double diagnostic_se = 0.0;  // delta-method
    double z_diagnostic = 2.5758293035489004;  // 99%
    bool mean_ok = false;
    bool exponential_ok = false;
};

inline OccupationLawReport occupation_law_check(int j, const ModelParams& p, std::size_t n_paths,
                                                std::uint64_t seed, int cap = kDefaultCap,
                                                int n_threads = 0) {
    if (n_paths < 100) throw std::invalid_argument("occupation_law_check: need n_paths >= 100");
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> samples(n_paths, 0.0);
    par::run_blocks<int>(
        n_paths, [] { return 0; },
        [&](int&, std::size_t first, std::size_t last) {
            for (std::size_t path = first; path < last; ++path) {
                double occ = 0.0;
                detail::walk_chain(1, inf, cap, p, seed, path, [&](int state, double sojourn, bool) {
                    if (state == j) occ += sojourn;
                });
                samples[path] = occ;
            }
        },
        n_threads);

    const double n = static_cast<double>(n_paths);
    double mean = 0.0;
    for (double v : samples) mean += v;
    mean /= n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double v : samples) {
        const double d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;

    OccupationLawReport r;
    r.state = j;
    r.n_paths = n_paths;
    r.expected_mean = expected_occupation(1, j, p);
    r.sample_mean = mean;
    r.mean_se = std::sqrt(m2 / n);
    r.sample_variance = m2 * n / (n - 1.0);
    r.diagnostic = r.sample_variance / (mean * mean) - 1.0;
    // delta method for g(a,b) = b/a^2 - 1 at (mean, var) with the sample
    // covariance of (Xbar, S^2): Var = [ga gb] [[m2, m3],[m3, m4-m2^2]] [ga gb]^T / n
    const double ga = -2.0 * m2 / (mean * mean * mean);
    const double gb = 1.0 / (mean * mean);
    const double var_d =
        (ga * ga * m2 + 2.0 * ga * gb * m3 + gb * gb * (m4 - m2 * m2)) / n;
    r.diagnostic_se = std::sqrt(std::max(var_d, 0.0));
    r.mean_ok = std::abs(r.sample_mean - r.expected_mean) <= 3.0 * r.mean_se;
    r.exponential_ok = std::abs(r.diagnostic) <= r.z_diagnostic * r.diagnostic_se;
    return r;
}

}  // namespace dyadic
