#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "dyadic/chain.hpp"
#include "dyadic/qmatrix.hpp"

using namespace dyadic;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("jump probabilities and holding rates") {
    const ModelParams p(2.0, 0.0);
    REQUIRE(jump_up_probability(1, p) == 1.0);
    REQUIRE_THAT(jump_up_probability(5, p), WithinRel(0.8, 1e-15));
    for (double lam : {1.1, 2.0, 7.5})
        REQUIRE(jump_up_probability(2, ModelParams(lam, 0.0)) > 0.5);

    REQUIRE_THAT(holding_rate(1, p), WithinRel(4.0, 1e-15));
    REQUIRE_THAT(holding_rate(2, p), WithinRel(20.0, 1e-15));
    for (int j = 1; j < 12; ++j) REQUIRE(holding_rate(j + 1, p) > holding_rate(j, p));
}

TEST_CASE("never-visit probabilities") {
    const ModelParams p(2.0, 0.0);
    REQUIRE(never_visit_probability(2, 5, p) == 0.0);
    REQUIRE(never_visit_probability(4, 4, p) == 0.0);
    REQUIRE_THAT(never_visit_probability(3, 1, p), WithinRel(15.0 / 16.0, 1e-15));
}

TEST_CASE("expected occupation times") {
    const ModelParams p(2.0, 0.0);
    REQUIRE_THAT(expected_occupation(1, 1, p), WithinRel(1.0 / 3.0, 1e-15));
    REQUIRE_THAT(expected_occupation(2, 1, p), WithinRel(1.0 / 12.0, 1e-15));
    for (int i = 1; i <= 6; ++i)
        for (int j = 1; j <= 6; ++j)
            REQUIRE(expected_occupation(i, j, p) == expected_occupation(j, i, p));

    // closed-form total lifetime equals the summed series
    for (int i : {1, 2, 5, 40}) {
        double series = 0.0;
        for (int j = 1; j <= 400; ++j) series += expected_occupation(i, j, p);
        REQUIRE_THAT(expected_total_lifetime(i, p), WithinRel(series, 1e-13));
    }
    REQUIRE_THAT(expected_total_lifetime(1, p), WithinRel(4.0 / 9.0, 1e-14));
    REQUIRE_THAT(expected_total_lifetime(2, p), WithinRel(7.0 / 36.0, 1e-14));
    REQUIRE(cap_tail_bias(40, p) < 1e-22);
}

TEST_CASE("survival bound and threshold") {
    const ModelParams p(2.0, 0.0);
    REQUIRE_THAT(survival_bound_threshold(p), WithinRel(std::log(2.0) * 16.0 / 27.0, 1e-14));
    REQUIRE_THAT(survival_upper_bound(1.0, p), WithinRel(1.0 / std::expm1(27.0 / 16.0), 1e-14));
    const double thr = survival_bound_threshold(p);
    REQUIRE(survival_upper_bound(thr * 1.0001, p) < 1.0);
    REQUIRE(survival_upper_bound(thr * 0.9999, p) > 1.0);
    REQUIRE(survival_upper_bound(50.0, p) < 1e-30);
}

TEST_CASE("simulated paths are structurally sound") {
    const ModelParams p(2.0, 0.0);
    for (std::uint64_t path = 0; path < 200; ++path) {
        const auto cp = simulate_chain(1, 5.0, 25, p, 77u, path);
        REQUIRE(cp.visit_states.front() == 1);
        REQUIRE(cp.visit_states.size() == cp.holding_times.size());
        for (std::size_t k = 1; k < cp.visit_states.size(); ++k) {
            const int step = cp.visit_states[k] - cp.visit_states[k - 1];
            REQUIRE(std::abs(step) == 1);
            if (cp.visit_states[k - 1] == 1) REQUIRE(cp.visit_states[k] == 2);
        }
        // occupation sums the holding times per state
        std::vector<double> occ(cp.occupation.size(), 0.0);
        double total = 0.0;
        for (std::size_t k = 0; k < cp.visit_states.size(); ++k) {
            occ[static_cast<std::size_t>(cp.visit_states[k] - 1)] += cp.holding_times[k];
            total += cp.holding_times[k];
        }
        for (std::size_t j = 0; j < occ.size(); ++j)
            REQUIRE_THAT(cp.occupation[j], WithinAbs(occ[j], 1e-12));
        REQUIRE_THAT(cp.total_time, WithinAbs(total, 1e-12));
        if (cp.exploded) {
            REQUIRE(cp.censored_at_cap);
            REQUIRE(cp.explosion_time >= cp.total_time);
        }
    }
}

TEST_CASE("vanishing horizon leaves a single-state path") {
    const ModelParams p(2.0, 0.0);
    const auto cp = simulate_chain(3, 1e-12, 20, p, 5u, 0u);
    REQUIRE(cp.visit_states == std::vector<int>{3});
    REQUIRE(cp.total_time <= 1e-12);
    REQUIRE_FALSE(cp.exploded);
}

TEST_CASE("mean lifetime matches the closed form") {
    const ModelParams p(2.0, 0.0);
    const auto g1 = occupation_grid_stats(1, 6, p, 20000, 42u);
    REQUIRE_THAT(g1.lifetime_mean, WithinAbs(4.0 / 9.0, 3.0 * g1.lifetime_se));
    const auto g2 = occupation_grid_stats(2, 6, p, 20000, 43u);
    REQUIRE_THAT(g2.lifetime_mean, WithinAbs(7.0 / 36.0, 3.0 * g2.lifetime_se));
}

TEST_CASE("a quarter of the paths return to state 1") {
    const ModelParams p(2.0, 0.0);
    const std::size_t n = 20000;
    std::size_t returned = 0;
    for (std::uint64_t path = 0; path < n; ++path) {
        const auto cp = simulate_chain(1, 1e9, 30, p, 99u, path);
        for (std::size_t k = 1; k < cp.visit_states.size(); ++k)
            if (cp.visit_states[k] == 1) {
                ++returned;
                break;
            }
    }
    const double freq = static_cast<double>(returned) / static_cast<double>(n);
    const double se = std::sqrt(0.25 * 0.75 / static_cast<double>(n));
    REQUIRE_THAT(freq, WithinAbs(0.25, 3.0 * se));
}

TEST_CASE("occupation law: mean and exponential diagnostic") {
    const ModelParams p(2.0, 0.0);
    for (int j : {1, 2}) {
        const auto law = occupation_law_check(j, p, 20000, 42u);
        INFO("state " << j << " mean " << law.sample_mean << " expected " << law.expected_mean);
        REQUIRE(law.mean_ok);
        REQUIRE(law.exponential_ok);
        REQUIRE_THAT(law.expected_mean,
                     WithinRel(j == 1 ? 1.0 / 3.0 : 1.0 / 12.0, 1e-14));
    }
}

TEST_CASE("survival estimates") {
    const ModelParams p(2.0, 0.0);
    {  // tiny t: everything survives
        const auto e = estimate_survival(1, 1e-6, p, 2000, 42u);
        REQUIRE(e.point > 0.999);
    }
    const auto curve = survival_curve(1, {0.2, 0.4, 0.6, 0.8, 1.0}, p, 20000, 42u);
    for (std::size_t k = 1; k < curve.size(); ++k) REQUIRE(curve[k].point <= curve[k - 1].point);
    const auto& at1 = curve.back();
    REQUIRE(at1.point <= survival_upper_bound(1.0, p) + at1.half_width);
    // frozen truth from the N=40 forward solve: 0.080303
    REQUIRE_THAT(at1.point, WithinAbs(0.0803029615537, 4.0 * at1.half_width));
    REQUIRE_FALSE(at1.bias_warning);
    // start-state monotonicity
    const auto from4 = estimate_survival(4, 1.0, p, 20000, 17u);
    REQUIRE(from4.point <= at1.point + from4.half_width + at1.half_width);
}

TEST_CASE("transition estimates sum to the survival estimate") {
    const ModelParams p(2.0, 0.0);
    const std::size_t n = 20000;
    const int cap = 40;
    const auto row = estimate_transition_row(1, cap - 1, 0.5, p, n, 42u, cap);
    const auto surv = survival_curve(1, {0.5}, p, n, 42u, cap).front();
    double total = 0.0;
    for (const auto& e : row) total += e.point;
    // same seed, same walks: the identity is exact at the estimator level
    REQUIRE_THAT(total, WithinAbs(surv.point, 1e-12));
    // t -> 0: the chain is still at the start state
    const auto early = estimate_transition(1, 1, 1e-7, p, 2000, 42u);
    REQUIRE(early.point > 0.999);
}

TEST_CASE("transition symmetry against the forward solve") {
    const ModelParams p(2.0, 0.0);
    const double t = 0.3;
    const auto f12 = estimate_transition(1, 2, t, p, 40000, 42u);
    const auto f21 = estimate_transition(2, 1, t, p, 40000, 43u);
    REQUIRE_THAT(f12.point, WithinAbs(f21.point, 3.0 * (f12.se + f21.se)));

    const auto q = build_q_matrix(p, TruncationSpec(30, Boundary::absorbing));
    MomentVector e1(30, 0.0);
    e1[0] = 1.0;
    const auto u = solve_forward(q, e1, 0.0, t, 1).values.back();
    REQUIRE_THAT(f12.point, WithinAbs(u[1], 3.0 * f12.se));
    REQUIRE_THAT(f21.point, WithinAbs(u[1], 3.0 * f21.se));
}

TEST_CASE("monte carlo occupation and never-visit grids match the closed forms") {
    const ModelParams p(2.0, 0.0);
    for (int i0 : {1, 3, 6}) {
        const auto g = occupation_grid_stats(i0, 6, p, 20000, 100u + static_cast<std::uint64_t>(i0));
        for (int j = 1; j <= 6; ++j) {
            const std::size_t k = static_cast<std::size_t>(j - 1);
            REQUIRE_THAT(g.occupation_mean[k],
                         WithinAbs(expected_occupation(i0, j, p), 3.0 * g.occupation_se[k]));
            REQUIRE_THAT(g.never_visit_freq[k],
                         WithinAbs(never_visit_probability(i0, j, p),
                                   3.0 * std::max(g.never_visit_se[k], 1e-12)));
        }
    }
}

TEST_CASE("chain runs are deterministic across thread counts") {
    const ModelParams p(2.0, 0.0);
    const auto a = survival_curve(1, {0.3, 0.9}, p, 4000, 7u, 40, 1);
    const auto b = survival_curve(1, {0.3, 0.9}, p, 4000, 7u, 40, 3);
    for (std::size_t k = 0; k < a.size(); ++k) {
        REQUIRE(a[k].point == b[k].point);
        REQUIRE(a[k].ci_low == b[k].ci_low);
    }
}
