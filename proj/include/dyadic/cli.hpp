#pragma once

// Command-line front end. Subcommands:
//   oracle stationary|occupation|pi|survival-bound   closed-form values
//   simulate-sde                                     ensemble statistics
//   solve-moments                                    forward moment solve
//   simulate-chain                                   jump-chain statistics
//   verify <suite>                                   cross-validation suites
//
// --config <file> loads a JSON config (a manifest.json works as-is);
// explicit flags override file values. Exit codes: 0 ok, 1 failed
// verification, 2 usage errors, 3 numeric-range errors.

#include <CLI11.hpp>

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "dyadic/crossval.hpp"
#include "dyadic/io.hpp"

namespace dyadic::cli {

using nlohmann::json;

namespace detail {

inline json prescan_config(int argc, const char* const argv[]) {
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        std::string path;
        if (a == "--config" && i + 1 < argc)
            path = argv[i + 1];
        else if (a.rfind("--config=", 0) == 0)
            path = a.substr(9);
        if (!path.empty()) {
            std::ifstream in(path);
            if (!in) throw std::invalid_argument("--config: cannot open '" + path + "'");
            json j = json::parse(in, nullptr, true, true);
            return (j.contains("config") && j["config"].is_object()) ? j["config"] : j;
        }
    }
    return json::object();
}

template <class T>
void seed_from(const json& cfg, const char* key, T& target) {
    if (cfg.contains(key)) target = cfg[key].get<T>();
}

inline Boundary parse_boundary(const std::string& s) {
    if (s == "conservative") return Boundary::conservative;
    if (s == "absorbing") return Boundary::absorbing;
    throw std::invalid_argument("--boundary must be conservative or absorbing, got '" + s + "'");
}

inline SchemeKind parse_scheme(const std::string& s) {
    if (s == "ito_splitting" || s == "ito") return SchemeKind::ito_splitting;
    if (s == "cayley_stratonovich" || s == "cayley") return SchemeKind::cayley_stratonovich;
    throw std::invalid_argument("--scheme must be ito_splitting or cayley_stratonovich, got '" + s + "'");
}

inline ForcingOrder parse_forcing(const std::string& s) {
    if (s == "pre") return ForcingOrder::pre;
    if (s == "post") return ForcingOrder::post;
    if (s == "strang") return ForcingOrder::strang;
    throw std::invalid_argument("--forcing must be pre, post or strang, got '" + s + "'");
}

inline std::vector<double> checkpoint_grid(double t_final, int checkpoints) {
    if (checkpoints < 1) throw std::invalid_argument("--checkpoints must be >= 1");
    std::vector<double> g;
    for (int k = 1; k <= checkpoints; ++k) g.push_back(t_final * k / checkpoints);
    return g;
}

inline void print_report(const ExperimentReport& rep, bool verbose_failures = true) {
    std::size_t ok = 0;
    for (const auto& m : rep.metrics) ok += m.pass ? 1 : 0;
    std::printf("[%s] %-26s %zu/%zu metrics\n", rep.passed() ? "PASS" : "FAIL", rep.name.c_str(),
                ok, rep.metrics.size());
    if (verbose_failures)
        for (const auto& m : rep.metrics)
            if (!m.pass)
                std::printf("       FAIL %s: value=%s reference=%s tolerance=%s (%s)\n",
                            m.label.c_str(), io::format_double(m.value).c_str(),
                            io::format_double(m.reference).c_str(),
                            io::format_double(m.tolerance).c_str(), m.provenance.c_str());
    for (const auto& n : rep.notes) std::printf("       note: %s\n", n.c_str());
}

}  // namespace detail

inline int run(int argc, const char* const argv[]) {
    int exit_code = 0;
    try {
        const json cfg = detail::prescan_config(argc, argv);

        // shared option state, seeded from --config, overridden by flags
        double lambda = 2.0, sigma = 1.0;
        int n_modes = 16;
        std::string boundary = "conservative";
        std::string scheme_name = "cayley_stratonovich";
        std::string forcing = "strang";
        double dt = 0.0;  // 0: the default 0.1 lambda^{-2(N-1)}
        double t_final = 1.0;
        std::uint64_t seed = 42;
        std::size_t paths = 10000;
        int checkpoints = 10;
        int threads = 0;
        std::string x0_spec = "zero", u0_spec = "e1";
        int start_state = 1, cap = kDefaultCap;
        double horizon = 1.0;
        std::string out_dir, format = "csv", config_path;
        int oracle_n = 8, oracle_i = 0, oracle_j = 0;
        double oracle_t = 1.0;

        detail::seed_from(cfg, "lambda", lambda);
        detail::seed_from(cfg, "sigma", sigma);
        detail::seed_from(cfg, "n_modes", n_modes);
        detail::seed_from(cfg, "boundary", boundary);
        detail::seed_from(cfg, "scheme", scheme_name);
        detail::seed_from(cfg, "forcing", forcing);
        detail::seed_from(cfg, "dt", dt);
        detail::seed_from(cfg, "t_final", t_final);
        detail::seed_from(cfg, "seed", seed);
        detail::seed_from(cfg, "paths", paths);
        detail::seed_from(cfg, "checkpoints", checkpoints);
        detail::seed_from(cfg, "threads", threads);
        detail::seed_from(cfg, "x0", x0_spec);
        detail::seed_from(cfg, "u0", u0_spec);
        detail::seed_from(cfg, "start", start_state);
        detail::seed_from(cfg, "cap", cap);
        detail::seed_from(cfg, "horizon", horizon);
        detail::seed_from(cfg, "format", format);

        CLI::App app{"dyadic-lab: simulation and verification laboratory for the forced linear "
                     "stochastic dyadic model"};
        app.require_subcommand(1);
        app.add_option("--config", config_path, "JSON config file; flags override its values");

        auto add_model_opts = [&](CLI::App* sub) {
            auto* lam = sub->add_option("--lambda", lambda, "spacing ratio lambda > 1");
            if (!cfg.contains("lambda")) lam->required();
            sub->add_option("--sigma", sigma, "forcing amplitude sigma >= 0");
        };

        // ---- oracle ----------------------------------------------------
        auto* oracle = app.add_subcommand("oracle", "print closed-form values");
        oracle->require_subcommand(1);
        auto* o_stat = oracle->add_subcommand("stationary", "stationary second moments s_1..s_n");
        add_model_opts(o_stat);
        o_stat->add_option("--n", oracle_n, "number of components to print");
        o_stat->callback([&] {
            const auto s = stationary_second_moments(ModelParams(lambda, sigma), oracle_n);
            for (double v : s) std::printf("%s\n", io::format_double(v).c_str());
        });
        auto* o_occ = oracle->add_subcommand("occupation", "expected occupation E_i(T_j)");
        add_model_opts(o_occ);
        o_occ->add_option("--i", oracle_i, "start state")->required();
        o_occ->add_option("--j", oracle_j, "occupied state")->required();
        o_occ->callback([&] {
            std::printf("%s\n", io::format_double(expected_occupation(
                                    oracle_i, oracle_j, ModelParams(lambda, sigma))).c_str());
        });
        auto* o_pi = oracle->add_subcommand(
            "pi", "never-visit probability pi_{i,j}; without --i/--j prints theta");
        add_model_opts(o_pi);
        o_pi->add_option("--i", oracle_i, "start state");
        o_pi->add_option("--j", oracle_j, "target state");
        o_pi->callback([&] {
            const ModelParams p(lambda, sigma);
            if (oracle_i >= 1 && oracle_j >= 1)
                std::printf("%s\n", io::format_double(never_visit_probability(oracle_i, oracle_j, p)).c_str());
            else
                std::printf("%s\n", io::format_double(jump_up_probability(2, p)).c_str());
        });
        auto* o_sb = oracle->add_subcommand("survival-bound", "survival upper bound and threshold");
        add_model_opts(o_sb);
        o_sb->add_option("--t", oracle_t, "time at which to evaluate the bound");
        o_sb->callback([&] {
            const ModelParams p(lambda, sigma);
            std::printf("bound(%s) = %s\n", io::format_double(oracle_t).c_str(),
                        io::format_double(survival_upper_bound(oracle_t, p)).c_str());
            std::printf("informative for t > %s\n",
                        io::format_double(survival_bound_threshold(p)).c_str());
        });

        // ---- simulate-sde ----------------------------------------------
        auto* sde = app.add_subcommand("simulate-sde", "run an SDE ensemble, emit statistics");
        add_model_opts(sde);
        sde->add_option("--n-modes", n_modes, "truncation level N >= 3");
        sde->add_option("--boundary", boundary, "conservative|absorbing");
        sde->add_option("--scheme", scheme_name, "ito_splitting|cayley_stratonovich");
        sde->add_option("--dt", dt, "step size (0: default 0.1 lambda^{-2(N-1)})");
        sde->add_option("--t-final", t_final, "final time");
        sde->add_option("--forcing", forcing, "forcing order for cayley: pre|post|strang");
        sde->add_option("--paths", paths, "number of paths");
        sde->add_option("--seed", seed, "RNG seed");
        sde->add_option("--checkpoints", checkpoints, "number of recorded times");
        sde->add_option("--x0", x0_spec, "initial condition: zero|e<k>|stationary|geom:a:r|gauss:<profile>");
        sde->add_option("--threads", threads, "worker threads (0: auto, capped by DYADIC_LAB_THREADS)");
        sde->add_option("--out", out_dir, "output directory")->required();
        sde->add_option("--format", format, "csv|json");
        sde->callback([&] {
            const ModelParams p(lambda, sigma);
            const TruncationSpec trunc(n_modes, detail::parse_boundary(boundary));
            SchemeSpec scheme{detail::parse_scheme(scheme_name),
                              dt > 0.0 ? dt : default_ito_dt(p, n_modes), t_final,
                              detail::parse_forcing(forcing)};
            const auto law = io::parse_initial_law(x0_spec, n_modes, p);
            const auto stats = run_ensemble(law, p, trunc, scheme,
                                            detail::checkpoint_grid(t_final, checkpoints), paths,
                                            seed, threads);
            json config{{"command", "simulate-sde"}, {"lambda", lambda}, {"sigma", sigma},
                        {"n_modes", n_modes},        {"boundary", boundary},
                        {"scheme", scheme_name},     {"dt", scheme.dt},
                        {"t_final", t_final},        {"forcing", forcing},
                        {"paths", paths},            {"seed", seed},
                        {"checkpoints", checkpoints},{"x0", x0_spec},
                        {"format", format}};
            io::RunWriter w(out_dir, config);
            if (format == "json") {
                w.add("ensemble.json", io::ensemble_json(stats).dump(2) + "\n");
            } else {
                w.add("ensemble.csv", io::ensemble_csv(stats));
                w.add("energy.csv", io::energy_csv(stats));
            }
            w.commit();
            std::printf("wrote %s (energy residual max %s)\n", out_dir.c_str(),
                        io::format_double(stats.energy_residual_max).c_str());
        });

        // ---- solve-moments ---------------------------------------------
        auto* mom = app.add_subcommand("solve-moments", "forward-solve the moment system");
        add_model_opts(mom);
        mom->add_option("--n-modes", n_modes, "truncation level N >= 3");
        auto* mom_boundary = mom->add_option("--boundary", boundary, "conservative|absorbing");
        if (!cfg.contains("boundary")) mom_boundary->required();
        mom->add_option("--u0", u0_spec, "initial moments: zero|e<k>|stationary|geom:a:r");
        mom->add_option("--t-final", t_final, "final time");
        mom->add_option("--checkpoints", checkpoints, "number of checkpoint times");
        mom->add_option("--out", out_dir, "output directory")->required();
        mom->add_option("--format", format, "csv|json");
        mom->callback([&] {
            const ModelParams p(lambda, sigma);
            const TruncationSpec trunc(n_modes, detail::parse_boundary(boundary));
            const auto q = build_q_matrix(p, trunc);
            const auto u0 = io::parse_profile(u0_spec, n_modes, p, /*as_moments=*/true);
            const auto sol = solve_forward(q, u0, sigma, t_final, checkpoints);
            json config{{"command", "solve-moments"}, {"lambda", lambda}, {"sigma", sigma},
                        {"n_modes", n_modes},         {"boundary", boundary},
                        {"t_final", t_final},         {"checkpoints", checkpoints},
                        {"u0", u0_spec},              {"format", format}};
            io::RunWriter w(out_dir, config);
            if (format == "json")
                w.add("moments.json", io::moments_json(sol).dump(2) + "\n");
            else
                w.add("moments.csv", io::moments_csv(sol));
            w.commit();
            std::printf("wrote %s (solver self-check rel error %s)\n", out_dir.c_str(),
                        io::format_double(sol.self_check_rel_error).c_str());
        });

        // ---- simulate-chain --------------------------------------------
        auto* ch = app.add_subcommand("simulate-chain", "jump-chain survival and occupation stats");
        add_model_opts(ch);
        ch->add_option("--start", start_state, "start state i0 >= 1");
        ch->add_option("--horizon", horizon, "largest survival time on the grid");
        ch->add_option("--cap", cap, "explosion cap M");
        ch->add_option("--paths", paths, "number of paths");
        ch->add_option("--seed", seed, "RNG seed");
        ch->add_option("--checkpoints", checkpoints, "survival grid size over (0, horizon]");
        ch->add_option("--threads", threads, "worker threads");
        ch->add_option("--out", out_dir, "output directory")->required();
        ch->add_option("--format", format, "csv|json");
        ch->callback([&] {
            const ModelParams p(lambda, sigma);
            const auto grid = detail::checkpoint_grid(horizon, checkpoints);
            const auto curve = survival_curve(start_state, grid, p, paths, seed, cap, threads);
            const auto occ = occupation_grid_stats(start_state, 6, p, paths, seed, cap, threads);
            json config{{"command", "simulate-chain"}, {"lambda", lambda}, {"sigma", sigma},
                        {"start", start_state},       {"horizon", horizon},
                        {"cap", cap},                 {"paths", paths},
                        {"seed", seed},               {"checkpoints", checkpoints},
                        {"format", format}};
            io::RunWriter w(out_dir, config);
            if (format == "json")
                w.add("survival.json", io::survival_json(curve, p).dump(2) + "\n");
            else {
                w.add("survival.csv", io::survival_csv(curve, p));
                w.add("occupation.csv", io::occupation_csv(occ, p));
            }
            w.commit();
            std::printf("wrote %s (lifetime mean %s, expected %s)\n", out_dir.c_str(),
                        io::format_double(occ.lifetime_mean).c_str(),
                        io::format_double(expected_total_lifetime(start_state, p)).c_str());
        });

        // ---- verify ----------------------------------------------------
        std::string suite = "all";
        std::size_t verify_paths = 0;
        auto* ver = app.add_subcommand("verify", "run cross-validation suites, exit 0 iff all pass");
        ver->add_option("suite", suite,
                        "oracles|energy|representation|dissipation|invariant|contraction|all");
        ver->add_option("--seed", seed, "RNG seed");
        ver->add_option("--threads", threads, "worker threads");
        ver->add_option("--paths", verify_paths, "path budget override for quick runs (0: full scale)");
        ver->add_option("--out", out_dir, "optional directory for the JSON report");
        ver->callback([&] {
            const std::size_t big = verify_paths ? verify_paths : 100000;
            const std::size_t mid = verify_paths ? verify_paths : 10000;
            std::vector<ExperimentReport> reports;
            auto want = [&](const char* name) { return suite == "all" || suite == name; };
            if (want("oracles")) {
                reports.push_back(oracle_closed_forms());
                reports.push_back(chain_closed_form_experiment(2.0, big, seed, kDefaultCap, threads));
                reports.push_back(survival_experiment(2.0, big, seed, kDefaultCap, 40, threads));
                reports.push_back(regularity_grid_experiment());
            }
            if (want("energy")) reports.push_back(energy_law_experiment(2.0, 12, mid, seed, threads));
            if (want("representation"))
                reports.push_back(check_moment_representation(2.0, 14, 0.25, mid, big, seed, 5e-6,
                                                              threads));
            if (want("dissipation")) {
                reports.push_back(dissipation_experiment(2.0, 1.0, big, seed, threads));
                reports.push_back(h_minus_one_monotonicity_suite(2.0, 16, seed));
            }
            if (want("invariant")) reports.push_back(invariant_convergence());
            if (want("contraction"))
                reports.push_back(contraction_check(2.0, 12, 1.0, std::min<std::size_t>(mid, 1000),
                                                    big, seed, threads));
            if (reports.empty())
                throw std::invalid_argument("unknown suite '" + suite + "'");

            bool all_pass = true;
            for (const auto& rep : reports) {
                detail::print_report(rep);
                all_pass = all_pass && rep.passed();
            }
            std::printf("verify %s: %s\n", suite.c_str(), all_pass ? "PASS" : "FAIL");
            if (!out_dir.empty()) {
                json doc;
                doc["suite"] = suite;
                doc["seed"] = seed;
                doc["reports"] = json::array();
                for (const auto& rep : reports) doc["reports"].push_back(rep.to_json());
                io::RunWriter w(out_dir, {{"command", "verify"}, {"suite", suite}, {"seed", seed}});
                w.add("report.json", doc.dump(2) + "\n");
                w.commit();
            }
            if (!all_pass) exit_code = 1;
        });

        try {
            app.parse(argc, argv);
        } catch (const CLI::CallForHelp& e) {
            return app.exit(e);
        } catch (const CLI::ParseError& e) {
            app.exit(e);
            return 2;
        }
        return exit_code;
    } catch (const std::range_error& e) {
        std::fprintf(stderr, "numeric range error: %s\n", e.what());
        return 3;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace dyadic::cli
