#pragma once

// Pathwise simulation of the truncated system, two schemes:
//
//  - ito_splitting: the stiff diagonal damping of the Ito form is integrated
//    exactly (factor exp(-rate/2 * dt) per mode), the off-diagonal noise
//    coupling is Euler-Maruyama at the pre-step state. Cheap workhorse,
//    guarded against dt too large for the truncation level.
//
//  - cayley_stratonovich: the Stratonovich coupling over a step is the skew
//    matrix G with G_{n+1,n} = k_n dW_n; the update (I - G/2)^{-1}(I + G/2)
//    is orthogonal, so with sigma = 0 and the conservative closure the l2
//    norm is preserved to roundoff at any step size. Forcing enters as
//    sigma dW_0 e_1 kicks around the rotation (pre / post / strang).
//
// The last row follows TruncationSpec.boundary: the conservative closure is
// the plain Galerkin cut (no damping from the missing mode), the absorbing
// closure keeps the full damping -1/2 (k_{N-1}^2 + k_N^2) X_N but has no
// noise coupling upward, which reproduces the absorbing moment system.
//
// All noise is counter-keyed by (seed, path_index, step, slot); paths are
// reproducible under any execution order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dyadic/model.hpp"
#include "dyadic/parallel.hpp"
#include "dyadic/rng.hpp"

namespace dyadic {

enum class SchemeKind { ito_splitting, cayley_stratonovich };
enum class ForcingOrder { pre, post, strang };

inline const char* to_string(SchemeKind k) {
    return k == SchemeKind::ito_splitting ? "ito_splitting" : "cayley_stratonovich";
}
inline const char* to_string(ForcingOrder f) {
    switch (f) {
        case ForcingOrder::pre: return "pre";
        case ForcingOrder::post: return "post";
        default: return "strang";
    }
}

struct SchemeSpec {
    SchemeKind kind = SchemeKind::cayley_stratonovich;
    double dt = 1e-3;
    double t_final = 1.0;
    ForcingOrder forcing_order = ForcingOrder::strang;

    void validate() const {
        if (!(dt > 0.0)) throw std::invalid_argument("SchemeSpec: dt must be > 0");
        if (!(t_final > 0.0)) throw std::invalid_argument("SchemeSpec: t_final must be > 0");
        if (dt > t_final) throw std::invalid_argument("SchemeSpec: dt must be <= t_final");
    }
};

// dt = 0.1 / lambda^{2(N-1)} keeps dt * max(k_{n-1}^2 + k_n^2) = 0.1(1+lambda^2).
inline double default_ito_dt(const ModelParams& p, int n_modes) {
    return 0.1 * std::pow(p.lambda, -2.0 * (n_modes - 1));
}

namespace detail {

struct SdeCoefficients {
    int n = 0;
    Boundary boundary = Boundary::conservative;
    double sigma = 0.0;
    std::vector<double> k;     // k[i] = lambda^{i+1}  (paper k_{i+1})
    std::vector<double> ksq;   // k[i]^2
    std::vector<double> rate;  // damping rate per mode

    static SdeCoefficients make(const ModelParams& p, const TruncationSpec& trunc) {
        SdeCoefficients c;
        c.n = trunc.n_modes;
        c.boundary = trunc.boundary;
        c.sigma = p.sigma;
        c.k.resize(static_cast<std::size_t>(c.n));
        c.ksq.resize(static_cast<std::size_t>(c.n));
        for (int i = 0; i < c.n; ++i) {
            c.k[static_cast<std::size_t>(i)] = wavenumber(i + 1, p);
            c.ksq[static_cast<std::size_t>(i)] =
                c.k[static_cast<std::size_t>(i)] * c.k[static_cast<std::size_t>(i)];
        }
        c.rate.resize(static_cast<std::size_t>(c.n));
        c.rate[0] = c.ksq[0];
        for (int i = 1; i + 1 < c.n; ++i)
            c.rate[static_cast<std::size_t>(i)] =
                c.ksq[static_cast<std::size_t>(i - 1)] + c.ksq[static_cast<std::size_t>(i)];
        c.rate[static_cast<std::size_t>(c.n - 1)] =
            trunc.boundary == Boundary::absorbing
                ? c.ksq[static_cast<std::size_t>(c.n - 2)] + c.ksq[static_cast<std::size_t>(c.n - 1)]
                : c.ksq[static_cast<std::size_t>(c.n - 2)];
        return c;
    }

    double max_coupled_rate() const { return ksq[static_cast<std::size_t>(n - 2)] + ksq[static_cast<std::size_t>(n - 1)]; }
};

inline void check_ito_step_range(const SdeCoefficients& c, double dt) {
    if (c.ksq.back() * dt > 50.0)
        throw std::range_error("ito_splitting_step: k_N^2 * dt = " +
                               std::to_string(c.ksq.back() * dt) +
                               " > 50; the drift factor underflows meaninglessly (dt too large "
                               "for this truncation level)");
}

inline void ito_step_inplace(const SdeCoefficients& c, std::span<const double> drift_factor,
                             std::span<const double> dW, double /*dt*/, std::vector<double>& x,
                             std::vector<double>& scratch) {
    const int n = c.n;
    scratch.resize(static_cast<std::size_t>(n));
    // diffusion at the pre-step state
    scratch[0] = -c.k[0] * x[1] * dW[1] + c.sigma * dW[0];
    for (int i = 1; i + 1 < n; ++i)
        scratch[static_cast<std::size_t>(i)] =
            c.k[static_cast<std::size_t>(i - 1)] * x[static_cast<std::size_t>(i - 1)] * dW[static_cast<std::size_t>(i)] -
            c.k[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i + 1)] * dW[static_cast<std::size_t>(i + 1)];
    scratch[static_cast<std::size_t>(n - 1)] =
        c.k[static_cast<std::size_t>(n - 2)] * x[static_cast<std::size_t>(n - 2)] * dW[static_cast<std::size_t>(n - 1)];
    for (int i = 0; i < n; ++i)
        x[static_cast<std::size_t>(i)] =
            drift_factor[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)] +
            scratch[static_cast<std::size_t>(i)];
}

// (I - G/2)^{-1} (I + G/2) x, with c_j = k_{j+1} dW_{j+1} / 2 coupling modes
// j and j+1 (0-based). Elimination pivots satisfy d >= 1.
inline void cayley_rotate_inplace(const SdeCoefficients& coef, std::span<const double> dW,
                                  std::vector<double>& x, std::vector<double>& cpl,
                                  std::vector<double>& diag, std::vector<double>& rhs) {
    const int n = coef.n;
    cpl.resize(static_cast<std::size_t>(n - 1));
    diag.resize(static_cast<std::size_t>(n));
    rhs.resize(static_cast<std::size_t>(n));
    for (int j = 0; j + 1 < n; ++j)
        cpl[static_cast<std::size_t>(j)] = 0.5 * coef.k[static_cast<std::size_t>(j)] * dW[static_cast<std::size_t>(j + 1)];
    for (int j = 0; j < n; ++j) {
        double v = x[static_cast<std::size_t>(j)];
        if (j > 0) v += cpl[static_cast<std::size_t>(j - 1)] * x[static_cast<std::size_t>(j - 1)];
        if (j + 1 < n) v -= cpl[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(j + 1)];
        rhs[static_cast<std::size_t>(j)] = v;
        if (!std::isfinite(v))
            throw std::range_error("cayley_step: non-finite state entering the linear solve");
    }
    diag[0] = 1.0;
    for (int j = 1; j < n; ++j) {
        const double m = -cpl[static_cast<std::size_t>(j - 1)] / diag[static_cast<std::size_t>(j - 1)];
        diag[static_cast<std::size_t>(j)] = 1.0 - m * cpl[static_cast<std::size_t>(j - 1)];
        rhs[static_cast<std::size_t>(j)] -= m * rhs[static_cast<std::size_t>(j - 1)];
    }
    x[static_cast<std::size_t>(n - 1)] = rhs[static_cast<std::size_t>(n - 1)] / diag[static_cast<std::size_t>(n - 1)];
    for (int j = n - 2; j >= 0; --j)
        x[static_cast<std::size_t>(j)] =
            (rhs[static_cast<std::size_t>(j)] - cpl[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(j + 1)]) /
            diag[static_cast<std::size_t>(j)];
}

inline void cayley_step_inplace(const SdeCoefficients& coef, std::span<const double> dW, double dt,
                                ForcingOrder order, std::vector<double>& x,
                                std::vector<double>& cpl, std::vector<double>& diag,
                                std::vector<double>& rhs) {
    const double kick = coef.sigma * dW[0];
    if (order == ForcingOrder::pre) x[0] += kick;
    if (order == ForcingOrder::strang) x[0] += 0.5 * kick;
    cayley_rotate_inplace(coef, dW, x, cpl, diag, rhs);
    if (coef.boundary == Boundary::absorbing)
        x[static_cast<std::size_t>(coef.n - 1)] *= std::exp(-0.5 * coef.ksq[static_cast<std::size_t>(coef.n - 1)] * dt);
    if (order == ForcingOrder::post) x[0] += kick;
    if (order == ForcingOrder::strang) x[0] += 0.5 * kick;
}

}  // namespace detail

// One-step kernels in spec form. increments holds N(0, dt) draws for
// W_0..W_N by paper subscript; the terminal slot is never used by either
// scheme and may be omitted.
inline StateVector ito_splitting_step(std::span<const double> x, std::span<const double> increments,
                                      double dt, const ModelParams& p, const TruncationSpec& trunc) {
    validate_state(x, trunc);
    if (static_cast<int>(increments.size()) < trunc.n_modes)
        throw std::invalid_argument("ito_splitting_step: need at least N increments");
    const auto c = detail::SdeCoefficients::make(p, trunc);
    detail::check_ito_step_range(c, dt);
    std::vector<double> factors(static_cast<std::size_t>(c.n));
    for (int i = 0; i < c.n; ++i)
        factors[static_cast<std::size_t>(i)] = std::exp(-0.5 * c.rate[static_cast<std::size_t>(i)] * dt);
    StateVector out(x.begin(), x.end());
    std::vector<double> scratch;
    detail::ito_step_inplace(c, factors, increments, dt, out, scratch);
    return out;
}

inline StateVector cayley_step(std::span<const double> x, std::span<const double> increments,
                               double dt, const ModelParams& p, const TruncationSpec& trunc,
                               ForcingOrder order = ForcingOrder::strang) {
    validate_state(x, trunc);
    if (static_cast<int>(increments.size()) < trunc.n_modes)
        throw std::invalid_argument("cayley_step: need at least N increments");
    const auto c = detail::SdeCoefficients::make(p, trunc);
    StateVector out(x.begin(), x.end());
    std::vector<double> cpl, diag, rhs;
    detail::cayley_step_inplace(c, increments, dt, order, out, cpl, diag, rhs);
    return out;
}

struct PathRecord {
    std::vector<double> sample_times;
    std::vector<StateVector> states;
    std::vector<double> w0_at_samples;  // running sum X_1(t_k) dW_0 at each sample
    double w0_integral = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t path_index = 0;
};

// Random or deterministic initial condition for ensemble runs.
class InitialLaw {
  public:
    enum class Kind { deterministic, gaussian };

    static InitialLaw point(StateVector x0) { return InitialLaw(Kind::deterministic, std::move(x0)); }
    // independent centered Gaussians with the given per-component variances
    static InitialLaw gaussian(std::vector<double> variances) {
        for (double v : variances)
            if (!(v >= 0.0)) throw std::invalid_argument("InitialLaw: variances must be >= 0");
        return InitialLaw(Kind::gaussian, std::move(variances));
    }

    Kind kind() const { return kind_; }
    const std::vector<double>& values() const { return values_; }
    std::size_t size() const { return values_.size(); }

    StateVector sample(std::uint64_t seed, std::uint64_t path_index) const {
        if (kind_ == Kind::deterministic) return values_;
        StateVector x(values_.size());
        rng::fill_normals(seed, path_index, 0, rng::Domain::initial_draw, x);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] *= std::sqrt(values_[i]);
        return x;
    }

    MomentVector second_moments() const {
        MomentVector u(values_.size());
        for (std::size_t i = 0; i < u.size(); ++i)
            u[i] = kind_ == Kind::deterministic ? values_[i] * values_[i] : values_[i];
        return u;
    }

  private:
    InitialLaw(Kind k, std::vector<double> v) : kind_(k), values_(std::move(v)) {}
    Kind kind_;
    std::vector<double> values_;
};

namespace detail {

// Step partition: the uniform dt ladder refined by the requested sample
// times, so recorded times are exactly the requested ones and the last step
// lands exactly on t_final.
struct StepGrid {
    std::vector<double> times;             // partition, times[0] = 0, back() = t_final
    std::vector<std::size_t> sample_index; // positions of the requested samples
};

inline StepGrid build_grid(double dt, double t_final, std::vector<double> samples) {
    for (double s : samples)
        if (!(s >= 0.0 && s <= t_final))
            throw std::invalid_argument("sample times must lie in [0, t_final]");
    samples.push_back(0.0);
    samples.push_back(t_final);
    std::sort(samples.begin(), samples.end());
    samples.erase(std::unique(samples.begin(), samples.end()), samples.end());

    std::vector<double> pts;
    const auto n_steps = static_cast<std::size_t>(std::ceil(t_final / dt - 1e-12));
    pts.reserve(n_steps + samples.size() + 1);
    for (std::size_t i = 0; i + 1 < n_steps; ++i) pts.push_back(dt * static_cast<double>(i + 1));
    const double snap = 1e-9 * dt;
    for (double s : samples) {
        // sample times replace any grid point they nearly coincide with
        auto it = std::lower_bound(pts.begin(), pts.end(), s - snap);
        if (it != pts.end() && std::abs(*it - s) <= snap)
            *it = s;
        else
            pts.insert(it, s);
    }
    StepGrid g;
    g.times = std::move(pts);
    g.sample_index.reserve(samples.size());
    for (double s : samples) {
        auto it = std::lower_bound(g.times.begin(), g.times.end(), s);
        g.sample_index.push_back(static_cast<std::size_t>(it - g.times.begin()));
    }
    return g;
}

// Per-thread stepping engine; owns all scratch buffers.
class PathEngine {
  public:
    PathEngine(const ModelParams& p, const TruncationSpec& trunc, const SchemeSpec& scheme,
               const StepGrid& grid)
        : coef_(SdeCoefficients::make(p, trunc)), scheme_(scheme), grid_(&grid) {
        scheme_.validate();
        if (scheme_.kind == SchemeKind::ito_splitting) {
            if (scheme_.dt * coef_.max_coupled_rate() > 10.0)
                throw std::invalid_argument(
                    "ito_splitting scheme rejected: dt * max(k_{n-1}^2 + k_n^2) = " +
                    std::to_string(scheme_.dt * coef_.max_coupled_rate()) +
                    " > 10 (stability guard); shrink dt or the truncation level");
            check_ito_step_range(coef_, scheme_.dt);
        }
        dW_.resize(static_cast<std::size_t>(coef_.n) + 1, 0.0);
        z_.resize(static_cast<std::size_t>(coef_.n), 0.0);
    }

    // visit(sample_slot, state, w0_running) for each requested sample
    template <class Visit>
    void run(const StateVector& x0, std::uint64_t seed, std::uint64_t path_index, Visit&& visit) {
        x_ = x0;
        double w0 = 0.0;
        std::size_t next_sample = 0;
        const auto& times = grid_->times;
        maybe_visit(visit, next_sample, 0, w0);
        for (std::size_t k = 0; k + 1 < times.size(); ++k) {
            const double h = times[k + 1] - times[k];
            rng::fill_normals(seed, path_index, k, rng::Domain::sde_increment, z_);
            const double sqrt_h = std::sqrt(h);
            for (std::size_t j = 0; j < z_.size(); ++j) dW_[j] = sqrt_h * z_[j];
            w0 += x_[0] * dW_[0];
            advance(h);
            maybe_visit(visit, next_sample, k + 1, w0);
        }
        w0_final_ = w0;
    }

    // Same walk driven by the dyadic ladder (refinement studies); the grid
    // must be the plain 2^level uniform partition.
    template <class Visit>
    void run_with_ladder(const StateVector& x0, const rng::DyadicBrownianLadder& ladder, int level,
                         Visit&& visit) {
        x_ = x0;
        double w0 = 0.0;
        std::size_t next_sample = 0;
        const auto& times = grid_->times;
        maybe_visit(visit, next_sample, 0, w0);
        for (std::size_t k = 0; k + 1 < times.size(); ++k) {
            const double h = times[k + 1] - times[k];
            for (std::size_t j = 0; j < z_.size(); ++j)
                dW_[j] = ladder.increment(level, k, static_cast<std::uint32_t>(j));
            w0 += x_[0] * dW_[0];
            advance(h);
            maybe_visit(visit, next_sample, k + 1, w0);
        }
        w0_final_ = w0;
    }

    double w0_integral() const { return w0_final_; }
    const SdeCoefficients& coefficients() const { return coef_; }

  private:
    template <class Visit>
    void maybe_visit(Visit& visit, std::size_t& next_sample, std::size_t grid_pos, double w0) {
        while (next_sample < grid_->sample_index.size() &&
               grid_->sample_index[next_sample] == grid_pos) {
            visit(next_sample, x_, w0);
            ++next_sample;
        }
    }

    void advance(double h) {
        if (scheme_.kind == SchemeKind::ito_splitting) {
            if (h != factor_h_) {
                factors_.resize(static_cast<std::size_t>(coef_.n));
                for (int i = 0; i < coef_.n; ++i)
                    factors_[static_cast<std::size_t>(i)] =
                        std::exp(-0.5 * coef_.rate[static_cast<std::size_t>(i)] * h);
                factor_h_ = h;
            }
            ito_step_inplace(coef_, factors_, dW_, h, x_, scratch_);
        } else {
            cayley_step_inplace(coef_, dW_, h, scheme_.forcing_order, x_, cpl_, diag_, rhs_);
        }
    }

    SdeCoefficients coef_;
    SchemeSpec scheme_;
    const StepGrid* grid_;
    std::vector<double> x_, dW_, z_, scratch_, cpl_, diag_, rhs_, factors_;
    double factor_h_ = -1.0;
    double w0_final_ = 0.0;
};

}  // namespace detail

inline PathRecord simulate_path(const StateVector& x0, const ModelParams& p,
                                const TruncationSpec& trunc, const SchemeSpec& scheme,
                                std::vector<double> sample_times, std::uint64_t seed,
                                std::uint64_t path_index) {
    validate_state(x0, trunc);
    const auto grid = detail::build_grid(scheme.dt, scheme.t_final, std::move(sample_times));
    detail::PathEngine engine(p, trunc, scheme, grid);
    PathRecord rec;
    rec.seed = seed;
    rec.path_index = path_index;
    rec.sample_times.reserve(grid.sample_index.size());
    for (std::size_t idx : grid.sample_index) rec.sample_times.push_back(grid.times[idx]);
    rec.states.resize(grid.sample_index.size());
    rec.w0_at_samples.resize(grid.sample_index.size());
    engine.run(x0, seed, path_index, [&](std::size_t slot, const StateVector& x, double w0) {
        rec.states[slot] = x;
        rec.w0_at_samples[slot] = w0;
    });
    rec.w0_integral = engine.w0_integral();
    return rec;
}

// Refinement variant: 2^level uniform steps over [0, t_final], increments
// from the pairwise-consistent dyadic ladder, so halving dt (level+1) keeps
// the same Brownian path.
inline PathRecord simulate_path_dyadic(const StateVector& x0, const ModelParams& p,
                                       const TruncationSpec& trunc, SchemeKind kind,
                                       ForcingOrder order, double t_final, int level,
                                       std::vector<double> sample_times, std::uint64_t seed,
                                       std::uint64_t path_index) {
    validate_state(x0, trunc);
    if (level < 0 || level > 30) throw std::invalid_argument("simulate_path_dyadic: bad level");
    const double dt = t_final / static_cast<double>(1ull << level);
    SchemeSpec scheme{kind, dt, t_final, order};
    const auto grid = detail::build_grid(dt, t_final, std::move(sample_times));
    detail::PathEngine engine(p, trunc, scheme, grid);
    rng::DyadicBrownianLadder ladder(seed, path_index, t_final);
    PathRecord rec;
    rec.seed = seed;
    rec.path_index = path_index;
    for (std::size_t idx : grid.sample_index) rec.sample_times.push_back(grid.times[idx]);
    rec.states.resize(grid.sample_index.size());
    rec.w0_at_samples.resize(grid.sample_index.size());
    engine.run_with_ladder(x0, ladder, level,
                           [&](std::size_t slot, const StateVector& x, double w0) {
                               rec.states[slot] = x;
                               rec.w0_at_samples[slot] = w0;
                           });
    rec.w0_integral = engine.w0_integral();
    return rec;
}

struct EnsembleStats {
    std::size_t n_paths = 0;
    std::vector<double> times;
    std::vector<std::vector<double>> mean_sq;    // [time][mode] sample mean of X_n^2
    std::vector<std::vector<double>> stderr_sq;  // matching standard errors
    std::vector<double> mean_energy;             // sample mean of |X|^2
    std::vector<double> stderr_energy;
    double energy_residual_max = 0.0;  // max | |X|^2 - |x0|^2 - 2 sigma w0 - sigma^2 t |
};

inline EnsembleStats run_ensemble(const InitialLaw& law, const ModelParams& p,
                                  const TruncationSpec& trunc, const SchemeSpec& scheme,
                                  std::vector<double> sample_times, std::size_t n_paths,
                                  std::uint64_t seed, int n_threads = 0) {
    if (n_paths < 2) throw std::invalid_argument("run_ensemble: need n_paths >= 2");
    if (static_cast<int>(law.size()) != trunc.n_modes)
        throw std::invalid_argument("run_ensemble: initial law size != n_modes");
    const auto grid = detail::build_grid(scheme.dt, scheme.t_final, std::move(sample_times));
    const std::size_t n_times = grid.sample_index.size();
    const std::size_t n_modes = static_cast<std::size_t>(trunc.n_modes);
    const double sigma = p.sigma;

    struct Partial {
        std::vector<double> sum_sq, sum_sq2;  // flattened [time*nmodes]
        std::vector<double> sum_e, sum_e2;
        double res_max = 0.0;
    };
    auto partials = par::run_blocks<Partial>(
        n_paths,
        [&] {
            Partial q;
            q.sum_sq.assign(n_times * n_modes, 0.0);
            q.sum_sq2.assign(n_times * n_modes, 0.0);
            q.sum_e.assign(n_times, 0.0);
            q.sum_e2.assign(n_times, 0.0);
            return q;
        },
        [&](Partial& q, std::size_t first, std::size_t last) {
            detail::PathEngine engine(p, trunc, scheme, grid);
            for (std::size_t path = first; path < last; ++path) {
                const StateVector x0 = law.sample(seed, path);
                double e0 = 0.0;
                for (double v : x0) e0 += v * v;
                engine.run(x0, seed, path, [&](std::size_t slot, const StateVector& x, double w0) {
                    double e = 0.0;
                    for (std::size_t i = 0; i < n_modes; ++i) {
                        const double sq = x[i] * x[i];
                        q.sum_sq[slot * n_modes + i] += sq;
                        q.sum_sq2[slot * n_modes + i] += sq * sq;
                        e += sq;
                    }
                    q.sum_e[slot] += e;
                    q.sum_e2[slot] += e * e;
                    const double t = grid.times[grid.sample_index[slot]];
                    const double res = std::abs(e - e0 - 2.0 * sigma * w0 - sigma * sigma * t);
                    q.res_max = std::max(q.res_max, res);
                });
            }
        },
        n_threads);
    Partial total = par::reduce_pairwise(std::move(partials), [](Partial& a, const Partial& b) {
        for (std::size_t i = 0; i < a.sum_sq.size(); ++i) {
            a.sum_sq[i] += b.sum_sq[i];
            a.sum_sq2[i] += b.sum_sq2[i];
        }
        for (std::size_t i = 0; i < a.sum_e.size(); ++i) {
            a.sum_e[i] += b.sum_e[i];
            a.sum_e2[i] += b.sum_e2[i];
        }
        a.res_max = std::max(a.res_max, b.res_max);
    });

    const double n = static_cast<double>(n_paths);
    EnsembleStats out;
    out.n_paths = n_paths;
    out.times.reserve(n_times);
    for (std::size_t idx : grid.sample_index) out.times.push_back(grid.times[idx]);
    out.mean_sq.assign(n_times, std::vector<double>(n_modes, 0.0));
    out.stderr_sq.assign(n_times, std::vector<double>(n_modes, 0.0));
    out.mean_energy.resize(n_times);
    out.stderr_energy.resize(n_times);
    auto se = [n](double s1, double s2) {
        const double mean = s1 / n;
        const double var = std::max(0.0, (s2 - n * mean * mean) / (n - 1.0));
        return std::sqrt(var / n);
    };
    for (std::size_t tdx = 0; tdx < n_times; ++tdx) {
        for (std::size_t i = 0; i < n_modes; ++i) {
            out.mean_sq[tdx][i] = total.sum_sq[tdx * n_modes + i] / n;
            out.stderr_sq[tdx][i] = se(total.sum_sq[tdx * n_modes + i], total.sum_sq2[tdx * n_modes + i]);
        }
        out.mean_energy[tdx] = total.sum_e[tdx] / n;
        out.stderr_energy[tdx] = se(total.sum_e[tdx], total.sum_e2[tdx]);
    }
    out.energy_residual_max = total.res_max;
    return out;
}

// Two-level common-noise ensemble with first-order weak extrapolation. The
// stiff top modes give one-step schemes an O(dt) moment bias with constant
// ~ k_j^2, so an unbiased single-level run is unaffordable at large N; the
// coarse path driven by the pairwise sums of the fine increments shares the
// Brownian path, and the per-path combination 2 X_fine^2 - X_coarse^2
// cancels the O(dt) term. Standard errors are the empirical ones of the
// extrapolated per-path samples.
struct ExtrapolatedEnsembleStats {
    std::size_t n_paths = 0;
    std::vector<double> times;
    std::vector<std::vector<double>> mean_sq;    // extrapolated estimator of E X_n^2
    std::vector<std::vector<double>> stderr_sq;  // SE of the extrapolated samples
    std::vector<std::vector<double>> fine_mean_sq, coarse_mean_sq;  // level diagnostics
};

inline ExtrapolatedEnsembleStats run_extrapolated_ensemble(
    const InitialLaw& law, const ModelParams& p, const TruncationSpec& trunc, SchemeKind kind,
    ForcingOrder order, double dt_fine, double t_final, std::vector<double> sample_times,
    std::size_t n_paths, std::uint64_t seed, int n_threads = 0) {
    if (n_paths < 2) throw std::invalid_argument("run_extrapolated_ensemble: need n_paths >= 2");
    if (!(dt_fine > 0.0) || dt_fine > t_final)
        throw std::invalid_argument("run_extrapolated_ensemble: need 0 < dt_fine <= t_final");
    const auto coef = detail::SdeCoefficients::make(p, trunc);
    const int n = coef.n;
    const std::size_t n_coarse =
        static_cast<std::size_t>(std::ceil(t_final / (2.0 * dt_fine) - 1e-12));
    const double h_c = t_final / static_cast<double>(n_coarse);
    const double h_f = 0.5 * h_c;
    if (kind == SchemeKind::ito_splitting) {
        if (h_c * coef.max_coupled_rate() > 10.0)
            throw std::invalid_argument("run_extrapolated_ensemble: ito dt fails the stability guard");
    }

    // samples snap to coarse-grid boundaries
    if (sample_times.empty()) sample_times = {t_final};
    std::vector<std::size_t> sample_steps;
    for (double s : sample_times) {
        if (!(s >= 0.0 && s <= t_final))
            throw std::invalid_argument("sample times must lie in [0, t_final]");
        sample_steps.push_back(static_cast<std::size_t>(std::llround(s / h_c)));
    }
    std::sort(sample_steps.begin(), sample_steps.end());
    sample_steps.erase(std::unique(sample_steps.begin(), sample_steps.end()), sample_steps.end());
    const std::size_t n_times = sample_steps.size();
    const std::size_t nm = static_cast<std::size_t>(n);

    std::vector<double> drift_f, drift_c;
    if (kind == SchemeKind::ito_splitting) {
        drift_f.resize(nm);
        drift_c.resize(nm);
        for (int i = 0; i < n; ++i) {
            drift_f[static_cast<std::size_t>(i)] = std::exp(-0.5 * coef.rate[static_cast<std::size_t>(i)] * h_f);
            drift_c[static_cast<std::size_t>(i)] = std::exp(-0.5 * coef.rate[static_cast<std::size_t>(i)] * h_c);
        }
    }

    struct Partial {
        std::vector<double> sum_v, sum_v2, sum_f, sum_c;  // [time*nm]
    };
    auto partials = par::run_blocks<Partial>(
        n_paths,
        [&] {
            Partial q;
            q.sum_v.assign(n_times * nm, 0.0);
            q.sum_v2.assign(n_times * nm, 0.0);
            q.sum_f.assign(n_times * nm, 0.0);
            q.sum_c.assign(n_times * nm, 0.0);
            return q;
        },
        [&](Partial& q, std::size_t first, std::size_t last) {
            std::vector<double> xf, xc, z(nm), dwf(nm + 1, 0.0), dwc(nm + 1, 0.0), scratch, cpl,
                diag, rhs;
            const double sqrt_hf = std::sqrt(h_f);
            for (std::size_t path = first; path < last; ++path) {
                xf = law.sample(seed, path);
                xc = xf;
                std::size_t next = 0;
                auto record = [&](std::size_t step_done) {
                    while (next < n_times && sample_steps[next] == step_done) {
                        for (std::size_t i = 0; i < nm; ++i) {
                            const double f2 = xf[i] * xf[i];
                            const double c2 = xc[i] * xc[i];
                            const double v = 2.0 * f2 - c2;
                            q.sum_v[next * nm + i] += v;
                            q.sum_v2[next * nm + i] += v * v;
                            q.sum_f[next * nm + i] += f2;
                            q.sum_c[next * nm + i] += c2;
                        }
                        ++next;
                    }
                };
                record(0);
                for (std::size_t m = 0; m < n_coarse; ++m) {
                    for (int half = 0; half < 2; ++half) {
                        rng::fill_normals(seed, path, 2 * m + static_cast<std::size_t>(half),
                                          rng::Domain::sde_increment, z);
                        for (std::size_t i = 0; i < nm; ++i) dwf[i] = sqrt_hf * z[i];
                        if (half == 0)
                            for (std::size_t i = 0; i < nm; ++i) dwc[i] = dwf[i];
                        else
                            for (std::size_t i = 0; i < nm; ++i) dwc[i] += dwf[i];
                        if (kind == SchemeKind::ito_splitting)
                            detail::ito_step_inplace(coef, drift_f, dwf, h_f, xf, scratch);
                        else
                            detail::cayley_step_inplace(coef, dwf, h_f, order, xf, cpl, diag, rhs);
                    }
                    if (kind == SchemeKind::ito_splitting)
                        detail::ito_step_inplace(coef, drift_c, dwc, h_c, xc, scratch);
                    else
                        detail::cayley_step_inplace(coef, dwc, h_c, order, xc, cpl, diag, rhs);
                    record(m + 1);
                }
            }
        },
        n_threads);
    Partial total = par::reduce_pairwise(std::move(partials), [](Partial& a, const Partial& b) {
        for (std::size_t i = 0; i < a.sum_v.size(); ++i) {
            a.sum_v[i] += b.sum_v[i];
            a.sum_v2[i] += b.sum_v2[i];
            a.sum_f[i] += b.sum_f[i];
            a.sum_c[i] += b.sum_c[i];
        }
    });

    const double np = static_cast<double>(n_paths);
    ExtrapolatedEnsembleStats out;
    out.n_paths = n_paths;
    for (std::size_t s : sample_steps) out.times.push_back(static_cast<double>(s) * h_c);
    out.mean_sq.assign(n_times, std::vector<double>(nm, 0.0));
    out.stderr_sq.assign(n_times, std::vector<double>(nm, 0.0));
    out.fine_mean_sq.assign(n_times, std::vector<double>(nm, 0.0));
    out.coarse_mean_sq.assign(n_times, std::vector<double>(nm, 0.0));
    for (std::size_t k = 0; k < n_times; ++k)
        for (std::size_t i = 0; i < nm; ++i) {
            const double mean = total.sum_v[k * nm + i] / np;
            const double var =
                std::max(0.0, (total.sum_v2[k * nm + i] - np * mean * mean) / (np - 1.0));
            out.mean_sq[k][i] = mean;
            out.stderr_sq[k][i] = std::sqrt(var / np);
            out.fine_mean_sq[k][i] = total.sum_f[k * nm + i] / np;
            out.coarse_mean_sq[k][i] = total.sum_c[k * nm + i] / np;
        }
    return out;
}

// Common-noise coupling: the difference D = X^x - X^y of two runs driven by
// the same increments satisfies the sigma = 0 dynamics exactly (the forcing
// kick cancels in the scheme maps, which are linear in the state), so D is
// simulated directly and never sees sigma. stream_hash fingerprints every
// sampled D state; it is bitwise identical across sigma by construction.
struct CoupledDifferenceStats {
    EnsembleStats stats;
    std::uint64_t stream_hash = 0;
};

inline CoupledDifferenceStats coupled_difference_ensemble(
    const StateVector& x, const StateVector& y, const ModelParams& p, const TruncationSpec& trunc,
    const SchemeSpec& scheme, std::vector<double> sample_times, std::size_t n_paths,
    std::uint64_t seed, int n_threads = 0) {
    if (x.size() != y.size()) throw std::invalid_argument("coupled ensemble: size mismatch");
    StateVector d0(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) d0[i] = x[i] - y[i];
    const ModelParams unforced(p.lambda, 0.0);

    // per-path hashes, folded in path order afterwards
    std::vector<std::uint64_t> path_hash(n_paths, 0);
    const auto grid = detail::build_grid(scheme.dt, scheme.t_final, sample_times);
    par::run_blocks<int>(
        n_paths, [] { return 0; },
        [&](int&, std::size_t first, std::size_t last) {
            detail::PathEngine engine(unforced, trunc, scheme, grid);
            for (std::size_t path = first; path < last; ++path) {
                std::uint64_t h = 1469598103934665603ull;  // FNV-1a
                engine.run(d0, seed, path, [&](std::size_t, const StateVector& d, double) {
                    for (double v : d) {
                        std::uint64_t bits;
                        static_assert(sizeof(bits) == sizeof(v));
                        std::memcpy(&bits, &v, sizeof(bits));
                        for (int b = 0; b < 8; ++b) {
                            h ^= (bits >> (8 * b)) & 0xFFu;
                            h *= 1099511628211ull;
                        }
                    }
                });
                path_hash[path] = h;
            }
        },
        n_threads);

    CoupledDifferenceStats out;
    out.stats = run_ensemble(InitialLaw::point(d0), unforced, trunc, scheme,
                             std::move(sample_times), n_paths, seed, n_threads);
    std::uint64_t h = 1469598103934665603ull;
    for (std::uint64_t ph : path_hash) {
        for (int b = 0; b < 8; ++b) {
            h ^= (ph >> (8 * b)) & 0xFFu;
            h *= 1099511628211ull;
        }
    }
    out.stream_hash = h;
    return out;
}

}  // namespace dyadic
