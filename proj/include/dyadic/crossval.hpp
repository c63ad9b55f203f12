#pragma once

// Cross-validation experiments: each one ties at least two of the three
// computational views together (SDE ensemble, moment ODE, jump chain) or
// checks a view against a closed form. Every reported metric carries the two
// compared values, an explicit tolerance and a provenance label; statistical
// "strictly less" claims are asserted as below-by-more-than-3-SE.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dyadic/chain.hpp"
#include "dyadic/model.hpp"
#include "dyadic/qmatrix.hpp"
#include "dyadic/sde.hpp"

namespace dyadic {

using nlohmann::json;

struct Metric {
    std::string label;
    double value = 0.0;      // measured quantity
    double reference = 0.0;  // compared value / bound
    double tolerance = 0.0;  // always explicit
    std::string provenance;  // closed-form | cross-solver | statistical
    bool pass = false;
};

struct ExperimentReport {
    std::string name;
    json parameters;
    std::vector<Metric> metrics;
    std::vector<std::string> notes;

    bool passed() const {
        return std::all_of(metrics.begin(), metrics.end(), [](const Metric& m) { return m.pass; });
    }

    json to_json() const {
        json j;
        j["name"] = name;
        j["parameters"] = parameters;
        j["passed"] = passed();
        j["metrics"] = json::array();
        for (const auto& m : metrics)
            j["metrics"].push_back({{"label", m.label},
                                    {"value", m.value},
                                    {"reference", m.reference},
                                    {"tolerance", m.tolerance},
                                    {"provenance", m.provenance},
                                    {"pass", m.pass}});
        j["notes"] = notes;
        return j;
    }
};

namespace detail {

inline Metric metric_close(std::string label, double value, double reference, double tol,
                           std::string provenance) {
    Metric m{std::move(label), value, reference, tol, std::move(provenance), false};
    m.pass = std::abs(value - reference) <= tol;
    return m;
}

inline Metric metric_close_rel(std::string label, double value, double reference, double rtol,
                               std::string provenance) {
    return metric_close(std::move(label), value, reference, rtol * std::abs(reference),
                        std::move(provenance));
}

// value must not exceed bound + slack
inline Metric metric_below(std::string label, double value, double bound, double slack,
                           std::string provenance) {
    Metric m{std::move(label), value, bound, slack, std::move(provenance), false};
    m.pass = value <= bound + slack;
    return m;
}

inline Metric metric_flag(std::string label, bool got, bool want, std::string provenance) {
    Metric m{std::move(label), got ? 1.0 : 0.0, want ? 1.0 : 0.0, 0.0, std::move(provenance), false};
    m.pass = got == want;
    return m;
}

inline std::string fmt(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Closed-form oracle suite (stationary moments, occupation means, never-visit
// probabilities, theta, survival bound and its threshold), all at 1e-12.
inline ExperimentReport oracle_closed_forms(const ModelParams& p = ModelParams(2.0, 1.0)) {
    ExperimentReport rep;
    rep.name = "oracle-closed-forms";
    rep.parameters = {{"lambda", p.lambda}, {"sigma", p.sigma}};
    const double rtol = 1e-12;

    const auto s = stationary_second_moments(p, 2);
    rep.metrics.push_back(detail::metric_close_rel("stationary s_1", s[0], 1.0 / 3.0, rtol, "closed-form"));
    rep.metrics.push_back(detail::metric_close_rel("stationary s_2", s[1], 1.0 / 12.0, rtol, "closed-form"));
    rep.metrics.push_back(detail::metric_close_rel("expected occupation E_1(T_1)",
                                                   expected_occupation(1, 1, p), 1.0 / 3.0, rtol,
                                                   "closed-form"));
    rep.metrics.push_back(detail::metric_close_rel("expected occupation E_2(T_1)",
                                                   expected_occupation(2, 1, p), 1.0 / 12.0, rtol,
                                                   "closed-form"));
    rep.metrics.push_back(detail::metric_close_rel("never-visit pi_{3,1}",
                                                   never_visit_probability(3, 1, p), 15.0 / 16.0,
                                                   rtol, "closed-form"));
    rep.metrics.push_back(detail::metric_close_rel("up probability theta", jump_up_probability(5, p),
                                                   0.8, rtol, "closed-form"));
    rep.metrics.push_back(detail::metric_close_rel("mean lifetime E_1(tau)",
                                                   expected_total_lifetime(1, p), 4.0 / 9.0, rtol,
                                                   "closed-form"));
    const double threshold = std::log(2.0) * 16.0 / 27.0;
    rep.metrics.push_back(detail::metric_close_rel("survival bound threshold",
                                                   survival_bound_threshold(p), threshold, rtol,
                                                   "closed-form"));
    const double bound1 = 1.0 / std::expm1(27.0 / 16.0);
    rep.metrics.push_back(detail::metric_close_rel("survival bound at t=1", survival_upper_bound(1.0, p),
                                                   bound1, rtol, "closed-form"));
    rep.notes.push_back("threshold = ln2 * lambda^4 (lambda^2-1)^{-3} = " + detail::fmt(threshold) +
                        ", bound(1) = 1/(e^{27/16}-1) = " + detail::fmt(bound1));
    return rep;
}

// ---------------------------------------------------------------------------
// Energy law: sigma=0 Cayley keeps the pathwise l2 norm to 1e-10 relative;
// sigma=1 from rest gives mean energy sigma^2 t within 3 SE.
inline ExperimentReport energy_law_experiment(double lambda = 2.0, int n_modes = 12,
                                              std::size_t n_paths = 10000, std::uint64_t seed = 42,
                                              int n_threads = 0) {
    ExperimentReport rep;
    rep.name = "energy-law";
    rep.parameters = {{"lambda", lambda},   {"n_modes", n_modes}, {"n_paths", n_paths},
                      {"seed", seed},       {"t_final", 0.25},    {"dt_pathwise", 1e-3},
                      {"dt_ensemble", 5e-4}};

    const TruncationSpec trunc(n_modes, Boundary::conservative);
    std::vector<double> samples;
    for (int k = 1; k <= 10; ++k) samples.push_back(0.25 * k / 10.0);

    {  // pathwise conservation at sigma = 0
        const ModelParams p(lambda, 0.0);
        StateVector x0(static_cast<std::size_t>(n_modes));
        double r = 1.0;
        for (auto& v : x0) {
            v = r;
            r *= 0.5;
        }
        SchemeSpec scheme{SchemeKind::cayley_stratonovich, 1e-3, 0.25, ForcingOrder::strang};
        double worst = 0.0;
        for (std::uint64_t path = 0; path < 4; ++path) {
            const auto rec = simulate_path(x0, p, trunc, scheme, samples, seed, path);
            const double n0 = l2_norm(rec.states.front(), p);
            for (const auto& x : rec.states)
                worst = std::max(worst, std::abs(l2_norm(x, p) - n0) / n0);
        }
        rep.metrics.push_back(detail::metric_below("pathwise |norm(t)-norm(0)|/norm(0), sigma=0",
                                                   worst, 1e-10, 0.0, "closed-form"));
    }
    {  // mean energy growth at sigma = 1
        const ModelParams p(lambda, 1.0);
        SchemeSpec scheme{SchemeKind::cayley_stratonovich, 5e-4, 0.25, ForcingOrder::strang};
        const auto stats = run_ensemble(InitialLaw::point(StateVector(static_cast<std::size_t>(n_modes), 0.0)),
                                        p, trunc, scheme, samples, n_paths, seed, n_threads);
        double worst_z = 0.0;
        double at_t = 0.0, expect_t = 0.0;
        for (std::size_t k = 0; k < stats.times.size(); ++k) {
            if (stats.times[k] == 0.0) continue;
            const double target = stats.times[k];  // sigma^2 t
            const double z = std::abs(stats.mean_energy[k] - target) / stats.stderr_energy[k];
            if (z > worst_z) {
                worst_z = z;
                at_t = stats.times[k];
                expect_t = target;
            }
        }
        Metric m{"max |mean energy - sigma^2 t| / SE over grid", worst_z, 0.0, 3.0, "statistical", worst_z <= 3.0};
        rep.metrics.push_back(m);
        rep.notes.push_back("worst grid point t=" + detail::fmt(at_t) + ", target sigma^2 t = " +
                            detail::fmt(expect_t));
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Jump chain against the closed forms: mean lifetime, occupation grid,
// exponential-law diagnostics, never-visit frequencies.
inline ExperimentReport chain_closed_form_experiment(double lambda = 2.0,
                                                     std::size_t n_paths = 100000,
                                                     std::uint64_t seed = 42, int cap = kDefaultCap,
                                                     int n_threads = 0) {
    ExperimentReport rep;
    rep.name = "chain-closed-forms";
    rep.parameters = {{"lambda", lambda}, {"n_paths", n_paths}, {"seed", seed}, {"cap", cap}};
    const ModelParams p(lambda, 0.0);

    const auto from1 = occupation_grid_stats(1, 6, p, n_paths, seed, cap, n_threads);
    rep.metrics.push_back(detail::metric_close("mean lifetime from 1 vs 4/9", from1.lifetime_mean,
                                               expected_total_lifetime(1, p),
                                               3.0 * from1.lifetime_se, "statistical"));
    for (int i0 = 1; i0 <= 6; ++i0) {
        const auto g = (i0 == 1) ? from1 : occupation_grid_stats(i0, 6, p, n_paths, seed + static_cast<std::uint64_t>(i0), cap, n_threads);
        for (int j = 1; j <= 6; ++j) {
            const std::size_t k = static_cast<std::size_t>(j - 1);
            rep.metrics.push_back(detail::metric_close(
                "occupation mean (" + std::to_string(i0) + "," + std::to_string(j) + ")",
                g.occupation_mean[k], expected_occupation(i0, j, p), 3.0 * g.occupation_se[k],
                "statistical"));
            rep.metrics.push_back(detail::metric_close(
                "never-visit freq (" + std::to_string(i0) + "," + std::to_string(j) + ")",
                g.never_visit_freq[k], never_visit_probability(i0, j, p),
                3.0 * std::max(g.never_visit_se[k], 1e-12), "statistical"));
        }
    }
    for (int j = 1; j <= 4; ++j) {
        const auto law = occupation_law_check(j, p, n_paths, seed, cap, n_threads);
        rep.metrics.push_back(detail::metric_close("T_" + std::to_string(j) + " mean vs corollary",
                                                   law.sample_mean, law.expected_mean,
                                                   3.0 * law.mean_se, "statistical"));
        rep.metrics.push_back(detail::metric_close(
            "T_" + std::to_string(j) + " exponentiality var/mean^2 - 1", law.diagnostic, 0.0,
            law.z_diagnostic * law.diagnostic_se, "statistical"));
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Survival: bound check at t=1, monotonicity on a grid, start-state
// monotonicity, and mass-loss identity against the absorbing forward solve.
inline ExperimentReport survival_experiment(double lambda = 2.0, std::size_t n_paths = 100000,
                                            std::uint64_t seed = 42, int cap = kDefaultCap,
                                            int forward_n = 40, int n_threads = 0) {
    ExperimentReport rep;
    rep.name = "survival-chain";
    rep.parameters = {{"lambda", lambda}, {"n_paths", n_paths}, {"seed", seed},
                      {"cap", cap},       {"forward_n", forward_n}};
    const ModelParams p(lambda, 0.0);

    const std::vector<double> grid{0.2, 0.4, 0.6, 0.8, 1.0};
    const auto curve = survival_curve(1, grid, p, n_paths, seed, cap, n_threads);
    const auto& at1 = curve.back();

    rep.metrics.push_back(detail::metric_below("P_1(tau>1) vs Lemma bound + CI", at1.point,
                                               survival_upper_bound(1.0, p), at1.half_width,
                                               "statistical"));
    bool monotone = true;
    for (std::size_t k = 1; k < curve.size(); ++k)
        if (curve[k].point > curve[k - 1].point) monotone = false;
    rep.metrics.push_back(detail::metric_flag("survival nonincreasing on grid", monotone, true,
                                              "statistical"));

    const auto from4 = estimate_survival(4, 1.0, p, n_paths, seed + 1001, cap, n_threads);
    rep.metrics.push_back(detail::metric_below("P_4(tau>1) <= P_1(tau>1) + combined CI", from4.point,
                                               at1.point, from4.half_width + at1.half_width,
                                               "statistical"));

    const auto q = build_q_matrix(p, TruncationSpec(forward_n, Boundary::absorbing));
    MomentVector u0(static_cast<std::size_t>(forward_n), 0.0);
    u0[0] = 1.0;
    const auto sol = solve_forward(q, u0, 0.0, 1.0, 5);
    const double mass = std::accumulate(sol.values.back().begin(), sol.values.back().end(), 0.0);
    Metric m{"sum_j u_j(1), absorbing N=" + std::to_string(forward_n) + ", inside MC CI", mass,
             at1.point, at1.half_width, "cross-solver", at1.ci_low <= mass && mass <= at1.ci_high};
    rep.metrics.push_back(m);
    rep.notes.push_back("cap tail bias bound " + detail::fmt(at1.cap_bias_bound) +
                        (at1.bias_warning ? " (WARNING: above CI/10)" : " (negligible vs CI)"));
    return rep;
}

// ---------------------------------------------------------------------------
// Triple agreement of Prop.-4.9 type: SDE ensemble (absorbing closure, two
// dt levels on a common Brownian path with first-order weak extrapolation),
// absorbing forward solve, and the chain reconstruction sum_i ubar_i f_{i,j}.
inline ExperimentReport check_moment_representation(double lambda = 2.0, int n_modes = 14,
                                                    double t = 0.25, std::size_t n_paths_sde = 10000,
                                                    std::size_t n_paths_chain = 100000,
                                                    std::uint64_t seed = 42, double dt_fine = 5e-6,
                                                    int n_threads = 0) {
    ExperimentReport rep;
    rep.name = "moment-representation";
    rep.parameters = {{"lambda", lambda},       {"n_modes", n_modes},
                      {"t", t},                 {"n_paths_sde", n_paths_sde},
                      {"n_paths_chain", n_paths_chain}, {"seed", seed},
                      {"dt_fine", dt_fine},     {"boundary", "absorbing"},
                      {"estimator", "two-level weak extrapolation"},
                      {"ubar", "e1"}};
    const ModelParams p(lambda, 0.0);
    const TruncationSpec trunc(n_modes, Boundary::absorbing);
    const int j_max = n_modes / 2;

    // (b) absorbing forward solve from ubar = e_1
    const auto q = build_q_matrix(p, trunc);
    MomentVector u0(static_cast<std::size_t>(n_modes), 0.0);
    u0[0] = 1.0;
    const auto fwd = solve_forward(q, u0, 0.0, t, 4);
    const auto& ode = fwd.values.back();

    rep.metrics.push_back(detail::metric_below("boundary state mass u_N(t)", ode.back(), 1e-6, 0.0,
                                               "cross-solver"));

    // (a) absorbing SDE ensemble
    StateVector x0(static_cast<std::size_t>(n_modes), 0.0);
    x0[0] = 1.0;
    const auto stats = run_extrapolated_ensemble(InitialLaw::point(x0), p, trunc,
                                                 SchemeKind::cayley_stratonovich,
                                                 ForcingOrder::strang, dt_fine, t, {t}, n_paths_sde,
                                                 seed, n_threads);
    const auto& sde = stats.mean_sq.back();
    const auto& sde_se = stats.stderr_sq.back();

    // (c) chain reconstruction: ubar = e_1, so just the f_{1,j} row
    const auto row = estimate_transition_row(1, j_max, t, p, n_paths_chain, seed, kDefaultCap,
                                             n_threads);

    for (int j = 1; j <= j_max; ++j) {
        const std::size_t k = static_cast<std::size_t>(j - 1);
        rep.metrics.push_back(detail::metric_close(
            "sde vs ode, j=" + std::to_string(j), sde[k], ode[k], 3.0 * sde_se[k], "statistical"));
        rep.metrics.push_back(detail::metric_close(
            "chain vs ode, j=" + std::to_string(j), row[k].point, ode[k], 3.0 * row[k].se,
            "statistical"));
        rep.metrics.push_back(detail::metric_close(
            "sde vs chain, j=" + std::to_string(j), sde[k], row[k].point,
            3.0 * std::sqrt(sde_se[k] * sde_se[k] + row[k].se * row[k].se), "statistical"));
    }
    rep.notes.push_back("forward solver self-check rel error " + detail::fmt(fwd.self_check_rel_error));
    return rep;
}

// ---------------------------------------------------------------------------
// Anomalous dissipation dichotomy: conservative truncations conserve total
// second moment exactly; the absorbing limit energy drops strictly below the
// initial energy, beyond statistical error.
inline ExperimentReport dissipation_experiment(double lambda = 2.0, double t = 1.0,
                                               std::size_t n_paths = 100000,
                                               std::uint64_t seed = 42, int n_threads = 0) {
    ExperimentReport rep;
    rep.name = "anomalous-dissipation";
    rep.parameters = {{"lambda", lambda}, {"t", t}, {"n_paths", n_paths}, {"seed", seed},
                      {"ubar", "e1"}};
    const ModelParams p(lambda, 0.0);

    for (int n : {8, 12, 16}) {
        const auto q = build_q_matrix(p, TruncationSpec(n, Boundary::conservative));
        MomentVector u0(static_cast<std::size_t>(n), 0.0);
        u0[0] = 1.0;
        const auto sol = solve_forward(q, u0, 0.0, t, 4);
        double worst = 0.0;
        for (const auto& u : sol.values)
            worst = std::max(worst, std::abs(std::accumulate(u.begin(), u.end(), 0.0) - 1.0));
        rep.metrics.push_back(detail::metric_below(
            "conservative mass drift, N=" + std::to_string(n), worst, 1e-8, 0.0, "cross-solver"));
    }
    for (int n : {16, 24, 40}) {
        const auto q = build_q_matrix(p, TruncationSpec(n, Boundary::absorbing));
        MomentVector u0(static_cast<std::size_t>(n), 0.0);
        u0[0] = 1.0;
        const auto sol = solve_forward(q, u0, 0.0, t, 1);
        const double mass = std::accumulate(sol.values.back().begin(), sol.values.back().end(), 0.0);
        rep.metrics.push_back(detail::metric_below("absorbing mass < 1, N=" + std::to_string(n),
                                                   mass, 1.0, 0.0, "cross-solver"));
    }
    const auto surv = estimate_survival(1, t, p, n_paths, seed, kDefaultCap, n_threads);
    const double se = detail::proportion_se(surv.point * static_cast<double>(n_paths),
                                            static_cast<double>(n_paths));
    rep.metrics.push_back(detail::metric_below("limit energy sum ubar_i P_i(tau>t) + 3 SE < 1",
                                               surv.point + 3.0 * se, 1.0, -1e-12, "statistical"));
    rep.notes.push_back("limit energy estimate " + detail::fmt(surv.point) + " +- " +
                        detail::fmt(se));
    return rep;
}

// ---------------------------------------------------------------------------
// H^{-1} functional decreasing along absorbing solves at sigma = 0, with the
// finite-difference slope matching the exact drift formula.
inline ExperimentReport h_minus_one_monotonicity_suite(double lambda = 2.0, int n_modes = 16,
                                                       std::uint64_t seed = 42) {
    ExperimentReport rep;
    rep.name = "h-minus-one-monotonicity";
    rep.parameters = {{"lambda", lambda}, {"n_modes", n_modes}, {"seed", seed},
                      {"t_final", 0.5},   {"grid_points", 20},  {"fd_step", 1e-6}};
    const ModelParams p(lambda, 0.0);
    const TruncationSpec trunc(n_modes, Boundary::absorbing);
    const auto q = build_q_matrix(p, trunc);
    const double t_final = 0.5;
    const int n_grid = 20;
    const double h = 1e-6;

    for (int instance = 0; instance < 3; ++instance) {
        MomentVector u0(static_cast<std::size_t>(n_modes));
        for (int i = 0; i < n_modes; ++i) {
            const auto u = rng::uniform_pair({seed, static_cast<std::uint64_t>(instance),
                                              static_cast<std::uint64_t>(i), 0,
                                              rng::Domain::scratch});
            u0[static_cast<std::size_t>(i)] = u[0];
        }
        const auto sol = solve_forward(q, u0, 0.0, t_final, n_grid);
        double prev = h_minus_one_functional(u0, p);
        bool monotone = true;
        for (const auto& u : sol.values) {
            const double f = h_minus_one_functional(u, p);
            if (f > prev * (1.0 + 1e-12)) monotone = false;
            prev = f;
        }
        rep.metrics.push_back(detail::metric_flag(
            "instance " + std::to_string(instance) + ": functional nonincreasing", monotone, true,
            "cross-solver"));

        double worst_rel = 0.0;
        for (int k = 1; k <= n_grid; ++k) {
            const double t = t_final * k / n_grid;
            const auto up = solve_forward(q, u0, 0.0, t + h, 1).values.back();
            const auto um = solve_forward(q, u0, 0.0, t - h, 1).values.back();
            const double fd =
                (h_minus_one_functional(up, p) - h_minus_one_functional(um, p)) / (2.0 * h);
            const double drift = h_minus_one_drift(sol.values[static_cast<std::size_t>(k - 1)], p);
            worst_rel = std::max(worst_rel, std::abs(fd - drift) / std::abs(drift));
        }
        rep.metrics.push_back(detail::metric_below(
            "instance " + std::to_string(instance) + ": max |fd - drift|/|drift|", worst_rel, 1e-4,
            0.0, "cross-solver"));
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Invariant-measure convergence fingerprint: forward solve from zero
// converges monotonically to the truncated stationary profile and the
// profile matches the closed form on the lower half. The strict t=3 / 1e-6
// threshold is asserted as configured even though it is not attainable (see
// the notes it emits); the observed gap and the time at which 1e-6 is first
// reached are reported alongside.
inline ExperimentReport invariant_convergence(double lambda = 2.0, double sigma = 1.0,
                                              int n_modes = 16, double t_target = 3.0,
                                              double rel_tol = 1e-6) {
    ExperimentReport rep;
    rep.name = "invariant-convergence";
    rep.parameters = {{"lambda", lambda}, {"sigma", sigma}, {"n_modes", n_modes},
                      {"t_target", t_target}, {"rel_tol", rel_tol}};
    const ModelParams p(lambda, sigma);
    const TruncationSpec trunc(n_modes, Boundary::absorbing);
    const auto q = build_q_matrix(p, trunc);
    const auto s_trunc = truncated_stationary(q, sigma);

    const int n_grid = 12;
    const auto sol = solve_forward(q, MomentVector(static_cast<std::size_t>(n_modes), 0.0), sigma,
                                   t_target, n_grid);

    bool monotone = true;
    for (std::size_t k = 1; k < sol.values.size(); ++k)
        for (int i = 0; i < n_modes; ++i)
            if (sol.values[k][static_cast<std::size_t>(i)] <
                sol.values[k - 1][static_cast<std::size_t>(i)] * (1.0 - 1e-12) - 1e-300)
                monotone = false;
    rep.metrics.push_back(detail::metric_flag("componentwise monotone convergence", monotone, true,
                                              "cross-solver"));

    auto max_rel_gap = [&](const MomentVector& u) {
        double g = 0.0;
        for (int i = 0; i < n_modes; ++i) {
            const std::size_t k = static_cast<std::size_t>(i);
            g = std::max(g, std::abs(u[k] - s_trunc[k]) / s_trunc[k]);
        }
        return g;
    };
    const double gap_at_target = max_rel_gap(sol.values.back());
    rep.metrics.push_back(detail::metric_below(
        "max rel gap to truncated stationary at t=" + detail::fmt(t_target), gap_at_target, rel_tol,
        0.0, "cross-solver"));

    // fingerprint on the first N/2 components
    const auto s_closed = stationary_second_moments(p, n_modes);
    double fp = 0.0;
    for (int i = 0; i < n_modes / 2; ++i) {
        const std::size_t k = static_cast<std::size_t>(i);
        fp = std::max(fp, std::abs(s_trunc[k] - s_closed[k]) / s_closed[k]);
    }
    rep.metrics.push_back(detail::metric_below("stationary fingerprint rel error, modes 1..N/2", fp,
                                               1e-3, 0.0, "closed-form"));

    // observed rate and the time the target tolerance is actually reached
    const double g2 = max_rel_gap(solve_forward(q, MomentVector(static_cast<std::size_t>(n_modes), 0.0),
                                                sigma, 2.0, 1).values.back());
    const double g3 = max_rel_gap(sol.values.back());
    const double rate = std::log(g2 / g3);
    double t_reach = t_target;
    double gap = gap_at_target;
    while (gap > rel_tol && t_reach < 12.0) {
        t_reach += 0.25;
        gap = max_rel_gap(solve_forward(q, MomentVector(static_cast<std::size_t>(n_modes), 0.0),
                                        sigma, t_reach, 1).values.back());
    }
    rep.notes.push_back("observed exponential convergence rate ~ " + detail::fmt(rate) +
                        " (spectral gap of the absorbing generator)");
    rep.notes.push_back("gap(t=" + detail::fmt(t_target) + ") = " + detail::fmt(gap_at_target) +
                        "; tolerance " + detail::fmt(rel_tol) + " first reached near t = " +
                        detail::fmt(t_reach));
    if (gap_at_target > rel_tol)
        rep.notes.push_back(
            "the t=3 / 1e-6 combination is provably out of reach: gap_1(t) = "
            "sigma^2 int_t^inf f_11 ds >= sigma^2 e^{-4t}/4, i.e. >= 4.6e-6 relative at t=3, and "
            "the actual decay rate is the spectral gap ~ 2.772 < 4");
    return rep;
}

// ---------------------------------------------------------------------------
// Coupling / contraction: common-noise difference paths are sigma-free
// bitwise, their mean squared l2 norm stays at |x-y|^2, and the absorbing
// surrogate sum (x-y)_i^2 P_i(tau>t) sits strictly below.
inline ExperimentReport contraction_check(double lambda = 2.0, int n_modes = 12, double t = 1.0,
                                          std::size_t n_paths = 1000,
                                          std::size_t n_paths_chain = 100000,
                                          std::uint64_t seed = 42, int n_threads = 0) {
    ExperimentReport rep;
    rep.name = "contraction-coupling";
    rep.parameters = {{"lambda", lambda}, {"n_modes", n_modes}, {"t", t},
                      {"n_paths", n_paths}, {"n_paths_chain", n_paths_chain}, {"seed", seed},
                      {"x", "e1"}, {"y", "zero"}, {"dt", 1e-3}};
    const TruncationSpec trunc(n_modes, Boundary::conservative);
    SchemeSpec scheme{SchemeKind::cayley_stratonovich, 1e-3, t, ForcingOrder::strang};
    StateVector x(static_cast<std::size_t>(n_modes), 0.0), y(static_cast<std::size_t>(n_modes), 0.0);
    x[0] = 1.0;

    const auto run0 = coupled_difference_ensemble(x, y, ModelParams(lambda, 0.0), trunc, scheme,
                                                  {0.5 * t, t}, n_paths, seed, n_threads);
    const auto run1 = coupled_difference_ensemble(x, y, ModelParams(lambda, 1.0), trunc, scheme,
                                                  {0.5 * t, t}, n_paths, seed, n_threads);
    rep.metrics.push_back(detail::metric_flag("difference stream bitwise identical, sigma 0 vs 1",
                                              run0.stream_hash == run1.stream_hash, true,
                                              "statistical"));

    const double target = 1.0;  // |x - y|^2
    const double mean = run0.stats.mean_energy.back();
    const double se = std::max(run0.stats.stderr_energy.back(), 1e-14);
    rep.metrics.push_back(detail::metric_close("E|X^x - X^y|^2(t) vs |x-y|^2", mean, target,
                                               3.0 * se, "statistical"));

    const auto surv = estimate_survival(1, t, ModelParams(lambda, 0.0), n_paths_chain, seed,
                                        kDefaultCap, n_threads);
    const double sse = detail::proportion_se(surv.point * static_cast<double>(n_paths_chain),
                                             static_cast<double>(n_paths_chain));
    rep.metrics.push_back(detail::metric_below("absorbing surrogate + 3 SE strictly below |x-y|^2",
                                               surv.point + 3.0 * sse, target, -1e-12,
                                               "statistical"));
    rep.notes.push_back("surrogate sum (x-y)_i^2 P_i(tau>t) = P_1(tau>" + detail::fmt(t) + ") = " +
                        detail::fmt(surv.point));
    return rep;
}

// ---------------------------------------------------------------------------
// Regularity-bound behaviour over the (alpha, beta) grid: partial sums
// converge iff beta < min(1, alpha+1); beta = 1 always raises the flag.
inline ExperimentReport regularity_grid_experiment(double lambda = 2.0, int ubar_len = 20,
                                                   int cutoff = 40) {
    ExperimentReport rep;
    rep.name = "regularity-bound-grid";
    rep.parameters = {{"lambda", lambda}, {"ubar_len", ubar_len}, {"cutoff", cutoff}};
    const ModelParams p(lambda, 0.0);

    auto make_ubar = [&](double alpha) {
        MomentVector u(static_cast<std::size_t>(ubar_len));
        for (int n = 1; n <= ubar_len; ++n)
            u[static_cast<std::size_t>(n - 1)] = std::pow(lambda, -2.0 * n * alpha);
        return u;
    };

    for (double alpha : {-0.5, 0.0, 0.5}) {
        for (double beta : {-0.5, 0.0, 0.9}) {
            const bool expect_converge = beta < std::min(1.0, alpha + 1.0);
            const auto rb = regularity_bound(make_ubar(alpha), SobolevIndex{beta}, p, cutoff);
            rep.metrics.push_back(detail::metric_flag(
                "alpha=" + detail::fmt(alpha) + " beta=" + detail::fmt(beta) +
                    (expect_converge ? " converges" : " diverges"),
                !rb.diverged, expect_converge, "closed-form"));
        }
    }
    const auto at_one = regularity_bound(make_ubar(0.5), SobolevIndex{1.0}, p, cutoff);
    rep.metrics.push_back(detail::metric_flag("beta=1 divergence flag", at_one.diverged, true,
                                              "closed-form"));
    const auto e1_case = regularity_bound(MomentVector{1.0}, SobolevIndex{0.0}, p, cutoff);
    rep.metrics.push_back(detail::metric_close_rel("ubar=e1, beta=0 partial sum vs 4/9",
                                                   e1_case.value, 4.0 / 9.0, 1e-10, "closed-form"));
    return rep;
}

}  // namespace dyadic
