#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "dyadic/rng.hpp"

using namespace dyadic::rng;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("counter draws are pure functions of the key") {
    const Counter c{123u, 45u, 678u, 9u, Domain::scratch};
    REQUIRE(raw_pair(c) == raw_pair(c));
    auto differs = [&](Counter d) { return raw_pair(d) != raw_pair(c); };
    REQUIRE(differs({124u, 45u, 678u, 9u, Domain::scratch}));
    REQUIRE(differs({123u, 46u, 678u, 9u, Domain::scratch}));
    REQUIRE(differs({123u, 45u, 679u, 9u, Domain::scratch}));
    REQUIRE(differs({123u, 45u, 678u, 10u, Domain::scratch}));
    REQUIRE(differs({123u, 45u, 678u, 9u, Domain::bridge}));
}

TEST_CASE("uniforms live in (0,1] and look uniform") {
    double sum = 0.0;
    double lo = 1.0, hi = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const auto u = uniform_pair({1u, 2u, static_cast<std::uint64_t>(i), 0, Domain::scratch});
        for (double v : {u[0], u[1]}) {
            REQUIRE(v > 0.0);
            REQUIRE(v <= 1.0);
            sum += v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    REQUIRE_THAT(sum / (2 * n), WithinAbs(0.5, 0.005));
    REQUIRE(lo < 5e-5);
    REQUIRE(hi > 1.0 - 5e-5);
}

TEST_CASE("normal pairs have the right first moments") {
    const int n = 200000;
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto z = normal_pair({99u, 0u, static_cast<std::uint64_t>(i), 0, Domain::scratch});
        s1 += z[0] + z[1];
        s2 += z[0] * z[0] + z[1] * z[1];
    }
    const double mean = s1 / (2 * n), var = s2 / (2 * n) - mean * mean;
    REQUIRE_THAT(mean, WithinAbs(0.0, 4.0 / std::sqrt(2.0 * n)));
    REQUIRE_THAT(var, WithinAbs(1.0, 4.0 * std::sqrt(2.0 / (2.0 * n))));
}

TEST_CASE("fill_normals is slot-stable") {
    std::vector<double> a(5), b(9);
    fill_normals(3u, 4u, 17u, Domain::sde_increment, a);
    fill_normals(3u, 4u, 17u, Domain::sde_increment, b);
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
}

TEST_CASE("exponential sampling has the right mean") {
    const double rate = 7.0;
    const int n = 100000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto h = exponential_and_uniform(
            {11u, 0u, static_cast<std::uint64_t>(i), 0, Domain::chain_jump}, rate);
        REQUIRE(h.hold >= 0.0);
        sum += h.hold;
        sum2 += h.hold * h.hold;
    }
    const double mean = sum / n;
    const double sd = std::sqrt(sum2 / n - mean * mean);
    REQUIRE_THAT(mean, WithinAbs(1.0 / rate, 3.0 * sd / std::sqrt(double(n))));
}

TEST_CASE("dyadic ladder refines consistently") {
    const double t_final = 0.75;
    const DyadicBrownianLadder ladder(42u, 7u, t_final);
    for (int level = 0; level < 6; ++level) {
        for (std::uint64_t m = 0; m < (1ull << level); ++m) {
            const double parent = ladder.increment(level, m, 3);
            const double left = ladder.increment(level + 1, 2 * m, 3);
            const double right = ladder.increment(level + 1, 2 * m + 1, 3);
            REQUIRE_THAT(left + right, WithinAbs(parent, 1e-12));
        }
    }
    // increments at one level telescope to the level-0 increment
    for (int level : {3, 7}) {
        double sum = 0.0;
        for (std::uint64_t m = 0; m < (1ull << level); ++m) sum += ladder.increment(level, m, 3);
        REQUIRE_THAT(sum, WithinAbs(ladder.increment(0, 0, 3), 1e-10));
    }
    // per-level variance is close to dt at a statistical tolerance
    const int level = 9;
    const int n = 1 << level;
    double s2 = 0.0;
    for (std::uint64_t m = 0; m < static_cast<std::uint64_t>(n); ++m) {
        const double v = ladder.increment(level, m, 5);
        s2 += v * v;
    }
    const double dt = t_final / n;
    REQUIRE_THAT(s2 / n, WithinRel(dt, 4.0 * std::sqrt(2.0 / n)));
}
