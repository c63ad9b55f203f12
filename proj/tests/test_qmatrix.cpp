#include <catch2/catch_amalgamated.hpp>

#include <numeric>

#include "dyadic/qmatrix.hpp"
#include "dyadic/rng.hpp"

using namespace dyadic;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {
MomentVector unit(int n, int k) {
    MomentVector u(static_cast<std::size_t>(n), 0.0);
    u[static_cast<std::size_t>(k - 1)] = 1.0;
    return u;
}
}  // namespace

TEST_CASE("q-matrix entries at lambda=2, N=3") {
    const ModelParams p(2.0, 0.0);
    const auto qc = build_q_matrix(p, TruncationSpec(3, Boundary::conservative));
    REQUIRE(qc.diag == std::vector<double>{-4.0, -20.0, -16.0});
    REQUIRE(qc.off == std::vector<double>{4.0, 16.0});
    for (double r : row_sums(qc)) REQUIRE_THAT(r, WithinAbs(0.0, 0.0));

    const auto qa = build_q_matrix(p, TruncationSpec(3, Boundary::absorbing));
    REQUIRE(qa.diag == std::vector<double>{-4.0, -20.0, -80.0});
    REQUIRE(qa.off == std::vector<double>{4.0, 16.0});
    const auto rs = row_sums(qa);
    REQUIRE(rs[0] == 0.0);
    REQUIRE(rs[1] == 0.0);
    REQUIRE(rs[2] == -64.0);
}

TEST_CASE("forward solve: zero stays zero") {
    const ModelParams p(2.0, 0.0);
    const auto q = build_q_matrix(p, TruncationSpec(8, Boundary::absorbing));
    const auto sol = solve_forward(q, MomentVector(8, 0.0), 0.0, 1.0, 4);
    for (const auto& u : sol.values)
        for (double v : u) REQUIRE(v == 0.0);
}

TEST_CASE("forward solve matches an independent reference (N=6)") {
    // reference values from a scipy eigendecomposition solve
    const ModelParams p(2.0, 0.0);
    {
        const auto q = build_q_matrix(p, TruncationSpec(6, Boundary::absorbing));
        const auto u = solve_forward(q, unit(6, 1), 0.0, 0.1, 1).values.back();
        const MomentVector ref{7.0692085705969487e-01, 1.5576337097590870e-01,
                               3.6427597966566742e-02, 8.8360642880059848e-03,
                               2.0943646067691324e-03, 4.1848890673489464e-04};
        for (std::size_t i = 0; i < ref.size(); ++i) REQUIRE_THAT(u[i], WithinRel(ref[i], 1e-9));
    }
    {
        const auto q = build_q_matrix(p, TruncationSpec(6, Boundary::conservative));
        const auto u = solve_forward(q, unit(6, 1), 0.0, 0.1, 1).values.back();
        const MomentVector ref{0.7072626036492149, 0.15997204803859946, 0.05017741854001636,
                               0.0299117648186488, 0.02654814862523305, 0.02612801632828725};
        for (std::size_t i = 0; i < ref.size(); ++i) REQUIRE_THAT(u[i], WithinRel(ref[i], 1e-9));
    }
    {
        const ModelParams pf(2.0, 1.0);
        const auto q = build_q_matrix(pf, TruncationSpec(5, Boundary::conservative));
        const auto u = solve_forward(q, MomentVector(5, 0.0), 1.0, 0.2, 1).values.back();
        const MomentVector ref{0.14525624635916773, 0.02840822139878673, 0.01075186884809489,
                               0.0079643300848169, 0.00761933330913364};
        for (std::size_t i = 0; i < ref.size(); ++i) REQUIRE_THAT(u[i], WithinRel(ref[i], 1e-9));
    }
}

TEST_CASE("conservative mass law: total moment grows exactly at sigma^2") {
    const ModelParams p(2.0, 1.0);
    const auto q = build_q_matrix(p, TruncationSpec(16, Boundary::conservative));
    const auto u0 = stationary_second_moments(p, 16);
    const auto sol = solve_forward(q, u0, p.sigma, 0.1, 5);
    const double m0 = std::accumulate(u0.begin(), u0.end(), 0.0);
    for (std::size_t k = 0; k < sol.times.size(); ++k) {
        const double m = std::accumulate(sol.values[k].begin(), sol.values[k].end(), 0.0);
        REQUIRE_THAT(m, WithinRel(m0 + sol.times[k], 1e-8));
    }
    REQUIRE(sol.self_check_rel_error <= 1e-8);
}

TEST_CASE("absorbing mass decay is monotone at sigma=0") {
    const ModelParams p(2.0, 0.0);
    const auto q = build_q_matrix(p, TruncationSpec(12, Boundary::absorbing));
    const auto sol = solve_forward(q, unit(12, 1), 0.0, 1.0, 10);
    double prev = 1.0;
    for (const auto& u : sol.values) {
        const double m = std::accumulate(u.begin(), u.end(), 0.0);
        REQUIRE(m <= prev * (1.0 + 1e-13));
        REQUIRE(m < 1.0);
        prev = m;
    }
}

TEST_CASE("nonnegativity holds for randomized nonnegative initial moments") {
    const ModelParams p(2.0, 0.0);
    const auto q = build_q_matrix(p, TruncationSpec(10, Boundary::absorbing));
    for (int rep = 0; rep < 20; ++rep) {
        MomentVector u0(10);
        for (int i = 0; i < 10; ++i)
            u0[static_cast<std::size_t>(i)] =
                rng::uniform_pair({5u, static_cast<std::uint64_t>(rep),
                                   static_cast<std::uint64_t>(i), 0, rng::Domain::scratch})[0];
        const auto sol = solve_forward(q, u0, 0.0, 0.3, 6);
        for (const auto& u : sol.values)
            for (double v : u) REQUIRE(v >= 0.0);  // clamped output, raw negatives bounded
    }
}

TEST_CASE("transition symmetry: e_i run read at j equals e_j run read at i") {
    const ModelParams p(2.0, 0.0);
    const auto q = build_q_matrix(p, TruncationSpec(12, Boundary::absorbing));
    for (auto [i, j] : {std::pair{1, 2}, std::pair{2, 5}, std::pair{3, 4}}) {
        const auto ui = solve_forward(q, unit(12, i), 0.0, 0.2, 1).values.back();
        const auto uj = solve_forward(q, unit(12, j), 0.0, 0.2, 1).values.back();
        REQUIRE_THAT(ui[static_cast<std::size_t>(j - 1)],
                     WithinRel(uj[static_cast<std::size_t>(i - 1)], 1e-9));
    }
}

TEST_CASE("truncated stationary solution") {
    const ModelParams p(2.0, 1.0);
    const auto q = build_q_matrix(p, TruncationSpec(8, Boundary::absorbing));
    const auto s8 = truncated_stationary(q, 1.0);
    // frozen from an independent linear solve
    const MomentVector ref{3.333282470703125e-01, 8.332824707031250e-02, 2.082824707031250e-02,
                           5.203247070312500e-03, 1.296997070312500e-03, 3.204345703125000e-04,
                           7.629394531250000e-05, 1.525878906250000e-05};
    for (std::size_t i = 0; i < ref.size(); ++i) REQUIRE_THAT(s8[i], WithinRel(ref[i], 1e-12));

    // matches the closed form on the first N/2 components at 1e-3
    const auto s_closed = stationary_second_moments(p, 8);
    for (int i = 0; i < 4; ++i)
        REQUIRE_THAT(s8[static_cast<std::size_t>(i)],
                     WithinRel(s_closed[static_cast<std::size_t>(i)], 1e-3));

    // defining residual |s Pi + sigma^2 e_1|_inf <= 1e-10 sigma^2
    std::vector<double> resid(8, 0.0);
    for (int r = 0; r < 8; ++r) {
        double acc = q.diag[static_cast<std::size_t>(r)] * s8[static_cast<std::size_t>(r)];
        if (r > 0) acc += q.off[static_cast<std::size_t>(r - 1)] * s8[static_cast<std::size_t>(r - 1)];
        if (r + 1 < 8) acc += q.off[static_cast<std::size_t>(r)] * s8[static_cast<std::size_t>(r + 1)];
        resid[static_cast<std::size_t>(r)] = acc + (r == 0 ? 1.0 : 0.0);
    }
    for (double v : resid) REQUIRE_THAT(v, WithinAbs(0.0, 1e-10));

    // refuses the conservative truncation, scales linearly in sigma^2
    const auto qc = build_q_matrix(p, TruncationSpec(8, Boundary::conservative));
    REQUIRE_THROWS_AS(truncated_stationary(qc, 1.0), std::invalid_argument);
    const auto s0 = truncated_stationary(q, 0.0);
    for (double v : s0) REQUIRE(v == 0.0);
}

TEST_CASE("stationarity is preserved by the forward solve") {
    const ModelParams p(2.0, 1.0);
    const auto q = build_q_matrix(p, TruncationSpec(16, Boundary::absorbing));
    const auto s = truncated_stationary(q, 1.0);
    const auto sol = solve_forward(q, s, 1.0, 1.0, 4);
    for (const auto& u : sol.values)
        for (std::size_t i = 0; i < u.size(); ++i) REQUIRE_THAT(u[i], WithinRel(s[i], 1e-8));
}

TEST_CASE("large stiff truncation: N=40 survival mass") {
    // lambda=2, N=40 absorbing puts |Pi| ~ 2.4e24; cross-checked against an
    // independent Radau solve (agreement to 1e-13)
    const ModelParams p(2.0, 0.0);
    const auto q = build_q_matrix(p, TruncationSpec(40, Boundary::absorbing));
    const auto u = solve_forward(q, unit(40, 1), 0.0, 1.0, 1).values.back();
    const double mass = std::accumulate(u.begin(), u.end(), 0.0);
    REQUIRE_THAT(mass, WithinRel(0.0803029615537, 1e-9));
}

TEST_CASE("implicit fallback route agrees with the spectral route") {
    const ModelParams p(1.3, 0.7);
    // N=50 runs through the spectral propagator, and the same system is
    // integrated by TR-BDF2 through the internal class
    const auto q = build_q_matrix(p, TruncationSpec(50, Boundary::absorbing));
    MomentVector u0(50, 0.0);
    u0[0] = 0.5;
    u0[3] = 0.25;
    const auto direct = solve_forward(q, u0, p.sigma, 0.4, 1).values.back();
    detail::TrBdf2Propagator prop(q, p.sigma, 1e-10);
    const auto stepped = prop.advance(u0, 0.4);
    for (std::size_t i = 0; i < direct.size(); ++i)
        REQUIRE_THAT(stepped[i], WithinAbs(direct[i], 1e-8 * (direct[0] + 1.0)));
}

TEST_CASE("fallback engages above the direct-size threshold") {
    const ModelParams p(1.2, 0.5);
    const auto q = build_q_matrix(p, TruncationSpec(kDirectSolveMaxSize + 6, Boundary::absorbing));
    MomentVector u0(static_cast<std::size_t>(kDirectSolveMaxSize + 6), 0.0);
    u0[0] = 1.0;
    const auto sol = solve_forward(q, u0, p.sigma, 0.2, 2);
    REQUIRE(sol.self_check_rel_error <= 1e-8);
    const double mass = std::accumulate(sol.values.back().begin(), sol.values.back().end(), 0.0);
    REQUIRE(mass > 0.0);
    REQUIRE(mass < 2.0);
}

TEST_CASE("h^{-1} functional and drift") {
    const ModelParams p(2.0, 0.0);
    REQUIRE_THAT(h_minus_one_functional(unit(8, 1), p), WithinRel(0.25, 1e-14));
    const auto s = stationary_second_moments(ModelParams(2.0, 1.0), 40);
    REQUIRE_THAT(h_minus_one_functional(s, p), WithinRel(4.0 / 45.0, 1e-12));
    REQUIRE(h_minus_one_functional(MomentVector(5, 0.3), p) >= 0.0);

    REQUIRE(h_minus_one_drift(MomentVector(8, 0.0), p) == 0.0);
    REQUIRE_THAT(h_minus_one_drift(unit(8, 1), p), WithinRel(-0.75, 1e-14));
    // nonpositive for nonnegative u
    MomentVector u{0.3, 0.1, 0.0, 0.2};
    REQUIRE(h_minus_one_drift(u, p) <= 0.0);
}

TEST_CASE("h^{-1} drift is the exact derivative along absorbing solves") {
    const ModelParams p(2.0, 0.0);
    const auto q = build_q_matrix(p, TruncationSpec(16, Boundary::absorbing));
    const auto u0 = unit(16, 1);
    const double h = 1e-7;
    for (double t : {0.05, 0.2}) {
        const auto um = solve_forward(q, u0, 0.0, t - h, 1).values.back();
        const auto uc = solve_forward(q, u0, 0.0, t, 1).values.back();
        const auto up = solve_forward(q, u0, 0.0, t + h, 1).values.back();
        const double fd = (h_minus_one_functional(up, p) - h_minus_one_functional(um, p)) / (2 * h);
        REQUIRE_THAT(fd, WithinRel(h_minus_one_drift(uc, p), 1e-6));
    }
}

TEST_CASE("regularity bound") {
    const ModelParams p(2.0, 0.0);
    {  // ubar = e_1, beta = 0: partial sums converge to 4/9
        const auto rb = regularity_bound(MomentVector{1.0}, SobolevIndex{0.0}, p, 30);
        REQUIRE_THAT(rb.value, WithinRel(4.0 / 9.0, 1e-12));
        REQUIRE_FALSE(rb.diverged);
        REQUIRE(rb.last_column_term < 1e-15);
    }
    {  // any beta < 1 stays finite and unflagged
        for (double beta : {-1.0, 0.0, 0.5, 0.9}) {
            const auto rb = regularity_bound(MomentVector{1.0}, SobolevIndex{beta}, p, 60);
            REQUIRE_FALSE(rb.diverged);
        }
    }
    {  // beta = 1: constant column tail, flagged
        const auto rb = regularity_bound(MomentVector{1.0}, SobolevIndex{1.0}, p, 30);
        REQUIRE(rb.diverged);
    }
    REQUIRE_THROWS_AS(regularity_bound(MomentVector(10, 1.0), SobolevIndex{0.0}, p, 5),
                      std::invalid_argument);
}
