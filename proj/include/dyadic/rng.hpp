#pragma once

// Counter-based random numbers (Philox4x32-10). Every draw is a pure function
// of (seed, stream, index, slot, domain), so Monte Carlo runs are reproducible
// independent of thread scheduling and execution order.
//
// One Philox block yields two doubles; normal draws come in Box-Muller pairs.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace dyadic::rng {

namespace detail {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 2> key,
                                                  std::array<std::uint32_t, 4> ctr) {
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = static_cast<std::uint64_t>(kPhiloxM0) * ctr[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(kPhiloxM1) * ctr[2];
        ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
               static_cast<std::uint32_t>(p1),
               static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
               static_cast<std::uint32_t>(p0)};
        key[0] += kPhiloxW0;
        key[1] += kPhiloxW1;
    }
    return ctr;
}

// Uniform in (0,1]: never 0, so -log(u) and Box-Muller are safe.
inline double u64_to_unit(std::uint64_t x) {
    return (static_cast<double>(x >> 11) + 1.0) * 0x1.0p-53;
}

}  // namespace detail

// Independent draw families; keeps e.g. SDE increments and initial-condition
// draws from colliding on the same counters.
enum class Domain : std::uint32_t {
    sde_increment = 0,
    initial_draw = 1,
    chain_jump = 2,
    bridge = 3,
    scratch = 4,
};

struct Counter {
    std::uint64_t seed = 0;    // run key
    std::uint64_t stream = 0;  // path index
    std::uint64_t index = 0;   // step / jump / node, < 2^48
    std::uint32_t slot = 0;    // component / block slot, < 2^12
    Domain domain = Domain::scratch;
};

inline std::array<std::uint64_t, 2> raw_pair(const Counter& c) {
    const std::uint64_t tag = (c.index & 0xFFFFFFFFFFFFull) |
                              (static_cast<std::uint64_t>(c.slot & 0xFFFu) << 48) |
                              (static_cast<std::uint64_t>(c.domain) << 60);
    const auto block = detail::philox4x32_10(
        {static_cast<std::uint32_t>(c.seed), static_cast<std::uint32_t>(c.seed >> 32)},
        {static_cast<std::uint32_t>(c.stream), static_cast<std::uint32_t>(c.stream >> 32),
         static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)});
    return {(static_cast<std::uint64_t>(block[0]) << 32) | block[1],
            (static_cast<std::uint64_t>(block[2]) << 32) | block[3]};
}

inline std::array<double, 2> uniform_pair(const Counter& c) {
    const auto r = raw_pair(c);
    return {detail::u64_to_unit(r[0]), detail::u64_to_unit(r[1])};
}

inline std::array<double, 2> normal_pair(const Counter& c) {
    const auto u = uniform_pair(c);
    const double r = std::sqrt(-2.0 * std::log(u[0]));
    const double a = 2.0 * std::numbers::pi * u[1];
    return {r * std::cos(a), r * std::sin(a)};
}

// Fills out[0..count) with standard normals; slot s of the logical draw array
// always comes from pair block s/2, so a given slot is scheme-independent.
inline void fill_normals(std::uint64_t seed, std::uint64_t stream, std::uint64_t index,
                         Domain domain, std::span<double> out) {
    for (std::size_t s = 0; s < out.size(); s += 2) {
        const auto z = normal_pair({seed, stream, index, static_cast<std::uint32_t>(s / 2), domain});
        out[s] = z[0];
        if (s + 1 < out.size()) out[s + 1] = z[1];
    }
}

// One exponential holding time plus one uniform (used as a jump decision).
struct HoldAndCoin {
    double hold;
    double coin;
};

inline HoldAndCoin exponential_and_uniform(const Counter& c, double rate) {
    const auto u = uniform_pair(c);
    return {-std::log(u[0]) / rate, u[1]};
}

// Dyadic Brownian increments over [0, t_final] with pairwise consistency:
// increment(l+1, 2m) + increment(l+1, 2m+1) == increment(l, m) (up to roundoff).
// Level l partitions [0, t_final] into 2^l equal steps. Used for
// strong-convergence studies on a common Brownian path.
class DyadicBrownianLadder {
  public:
    DyadicBrownianLadder(std::uint64_t seed, std::uint64_t stream, double t_final)
        : seed_(seed), stream_(stream), t_final_(t_final) {}

    double increment(int level, std::uint64_t m, std::uint32_t component) const {
        if (level == 0) {
            return std::sqrt(t_final_) * bridge_normal(0, 0, component);
        }
        const double parent = increment(level - 1, m >> 1, component);
        const double dt = t_final_ / static_cast<double>(1ull << level);
        const double b = std::sqrt(0.5 * dt) * bridge_normal(level, m >> 1, component);
        return ((m & 1ull) == 0) ? 0.5 * parent + b : 0.5 * parent - b;
    }

  private:
    double bridge_normal(int level, std::uint64_t node, std::uint32_t component) const {
        // slot packs (level, component); Box-Muller pairs are not shared
        // across nodes so each node consumes one block and uses lane 0.
        const std::uint32_t slot =
            (static_cast<std::uint32_t>(level) << 7) | (component & 0x7Fu);
        return normal_pair({seed_, stream_, node, slot, Domain::bridge})[0];
    }

    std::uint64_t seed_;
    std::uint64_t stream_;
    double t_final_;
};

}  // namespace dyadic::rng
