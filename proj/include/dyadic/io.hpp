#pragma once

// Output emission for the CLI: CSV ('.' decimal, 17 significant digits, so a
// written series is bit-recoverable) or a JSON mirror of the same records,
// plus manifest.json carrying the full run configuration and per-file
// checksums. A run re-executed from its own manifest reproduces its data
// files byte for byte.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dyadic/chain.hpp"
#include "dyadic/model.hpp"
#include "dyadic/qmatrix.hpp"
#include "dyadic/sde.hpp"

namespace dyadic::io {

using nlohmann::json;

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string checksum_hex(const std::string& bytes) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "fnv64:%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
    return buf;
}

// ---------------------------------------------------------------------------
// Initial-condition mini-language:
//   zero | e<k> | stationary | geom:<a>:<r>        (deterministic profiles)
//   gauss:<profile>                                 (independent Gaussians,
//                                                    profile read as variances)
// A profile names amplitudes for SDE states and moments for u-vectors;
// "stationary" is sqrt(s_n) as an amplitude and s_n as a moment.

inline std::vector<double> parse_profile(const std::string& spec, int n, const ModelParams& p,
                                         bool as_moments) {
    auto bad = [&](const std::string& why) {
        throw std::invalid_argument("bad profile spec '" + spec + "': " + why);
    };
    std::vector<double> out(static_cast<std::size_t>(n), 0.0);
    if (spec == "zero") return out;
    if (spec.size() > 1 && spec[0] == 'e') {
        int k = 0;
        try {
            k = std::stoi(spec.substr(1));
        } catch (...) {
            bad("expected e<k>");
        }
        if (k < 1 || k > n) bad("component out of range 1..N");
        out[static_cast<std::size_t>(k - 1)] = 1.0;
        return out;
    }
    if (spec == "stationary") {
        const auto s = stationary_second_moments(p, n);
        for (int i = 0; i < n; ++i)
            out[static_cast<std::size_t>(i)] =
                as_moments ? s[static_cast<std::size_t>(i)] : std::sqrt(s[static_cast<std::size_t>(i)]);
        return out;
    }
    if (spec.rfind("geom:", 0) == 0) {
        const auto rest = spec.substr(5);
        const auto colon = rest.find(':');
        if (colon == std::string::npos) bad("expected geom:<a>:<r>");
        double a = 0, r = 0;
        try {
            a = std::stod(rest.substr(0, colon));
            r = std::stod(rest.substr(colon + 1));
        } catch (...) {
            bad("expected numbers in geom:<a>:<r>");
        }
        double g = 1.0;
        for (int i = 0; i < n; ++i) {
            g *= r;
            out[static_cast<std::size_t>(i)] = a * g;
        }
        return out;
    }
    bad("unknown profile");
    return out;
}

inline InitialLaw parse_initial_law(const std::string& spec, int n, const ModelParams& p) {
    if (spec.rfind("gauss:", 0) == 0) {
        auto variances = parse_profile(spec.substr(6), n, p, /*as_moments=*/true);
        for (double v : variances)
            if (v < 0.0)
                throw std::invalid_argument("bad initial law '" + spec + "': negative variance");
        return InitialLaw::gaussian(std::move(variances));
    }
    return InitialLaw::point(parse_profile(spec, n, p, /*as_moments=*/false));
}

// ---------------------------------------------------------------------------
// Series formatting. Every CSV has a header row; JSON mirrors hold the same
// records as an array of objects.

inline std::string moments_csv(const ForwardSolution& sol) {
    std::string s = "time,n,u_n\n";
    for (std::size_t k = 0; k < sol.times.size(); ++k)
        for (std::size_t i = 0; i < sol.values[k].size(); ++i)
            s += format_double(sol.times[k]) + "," + std::to_string(i + 1) + "," +
                 format_double(sol.values[k][i]) + "\n";
    return s;
}

inline json moments_json(const ForwardSolution& sol) {
    json rows = json::array();
    for (std::size_t k = 0; k < sol.times.size(); ++k)
        for (std::size_t i = 0; i < sol.values[k].size(); ++i)
            rows.push_back({{"time", sol.times[k]}, {"n", i + 1}, {"u_n", sol.values[k][i]}});
    return rows;
}

inline std::string ensemble_csv(const EnsembleStats& st) {
    std::string s = "time,n,mean_sq,stderr\n";
    for (std::size_t k = 0; k < st.times.size(); ++k)
        for (std::size_t i = 0; i < st.mean_sq[k].size(); ++i)
            s += format_double(st.times[k]) + "," + std::to_string(i + 1) + "," +
                 format_double(st.mean_sq[k][i]) + "," + format_double(st.stderr_sq[k][i]) + "\n";
    return s;
}

inline json ensemble_json(const EnsembleStats& st) {
    json rows = json::array();
    for (std::size_t k = 0; k < st.times.size(); ++k)
        for (std::size_t i = 0; i < st.mean_sq[k].size(); ++i)
            rows.push_back({{"time", st.times[k]},
                            {"n", i + 1},
                            {"mean_sq", st.mean_sq[k][i]},
                            {"stderr", st.stderr_sq[k][i]}});
    return rows;
}

inline std::string energy_csv(const EnsembleStats& st) {
    std::string s = "time,mean_energy,stderr_energy\n";
    for (std::size_t k = 0; k < st.times.size(); ++k)
        s += format_double(st.times[k]) + "," + format_double(st.mean_energy[k]) + "," +
             format_double(st.stderr_energy[k]) + "\n";
    return s;
}

inline std::string survival_csv(const std::vector<SurvivalEstimate>& curve, const ModelParams& p) {
    std::string s = "t,point,ci_low,ci_high,upper_bound\n";
    for (const auto& e : curve)
        s += format_double(e.t) + "," + format_double(e.point) + "," + format_double(e.ci_low) +
             "," + format_double(e.ci_high) + "," + format_double(survival_upper_bound(e.t, p)) +
             "\n";
    return s;
}

inline json survival_json(const std::vector<SurvivalEstimate>& curve, const ModelParams& p) {
    json rows = json::array();
    for (const auto& e : curve)
        rows.push_back({{"t", e.t},
                        {"point", e.point},
                        {"ci_low", e.ci_low},
                        {"ci_high", e.ci_high},
                        {"upper_bound", survival_upper_bound(e.t, p)}});
    return rows;
}

inline std::string occupation_csv(const OccupationGridStats& g, const ModelParams& p) {
    std::string s = "i,j,mc_mean,mc_se,expected\n";
    for (std::size_t j = 0; j < g.occupation_mean.size(); ++j)
        s += std::to_string(g.start_state) + "," + std::to_string(j + 1) + "," +
             format_double(g.occupation_mean[j]) + "," + format_double(g.occupation_se[j]) + "," +
             format_double(expected_occupation(g.start_state, static_cast<int>(j + 1), p)) + "\n";
    return s;
}

// ---------------------------------------------------------------------------
// Run directory writer: collects named files, then writes them plus
// manifest.json (config + checksums).

class RunWriter {
  public:
    RunWriter(std::filesystem::path dir, json config)
        : dir_(std::move(dir)), config_(std::move(config)) {}

    void add(const std::string& name, std::string contents) {
        files_.emplace(name, std::move(contents));
    }

    void commit() {
        namespace fs = std::filesystem;
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec) throw std::runtime_error("cannot create output dir " + dir_.string() + ": " + ec.message());
        json manifest;
        manifest["tool"] = "dyadic-lab";
        manifest["config"] = config_;
        manifest["files"] = json::object();
        for (const auto& [name, contents] : files_) {
            write_file(dir_ / name, contents);
            manifest["files"][name] = checksum_hex(contents);
        }
        write_file(dir_ / "manifest.json", manifest.dump(2) + "\n");
    }

  private:
    static void write_file(const std::filesystem::path& path, const std::string& contents) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw std::runtime_error("write failed for " + path.string());
    }

    std::filesystem::path dir_;
    json config_;
    std::map<std::string, std::string> files_;
};

}  // namespace dyadic::io
