#pragma once

#include <fstream>
#include <initializer_list>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ratealloc/scenarios.hpp"

namespace ratealloc {

// Run configuration (JSON). Every object is checked against its key list
// before anything is computed; unknown keys are errors.
//
// {
//   "scenario": "heat" | "drone" | "scalar" | "custom",
//   "horizon": {"mode": "infinite"} | {"mode": "finite", "T": 4},
//   "beta": 0.1,
//   "beta_grid": [1, 10, 100, 220],            // sweep only
//   "seed": 1,
//   "out_dir": "out",
//   "weights": {"mode": "uniform"} | {"mode": "airtime", "bandwidth": .., "tx_power": ..,
//                                     "noise_psd": .., "ranges": x | [..], "path_gain": 1},
//   "tolerances": {"ccp": 1e-6, "max_iter": 100, "opt": 1e-10, "abs": 1e-10, "feas": 1e-9,
//                  "prune": true},
//   "heat": {"nodes": 60, "diffusivity": 7.5e-7, "segment_length": 0.2459,
//            "heat_model_variant": "as_printed" | "identity_minus_laplacian"},
//   "scalar": {"a": 0.9, "f": 1.0},
//   "custom": {"A": [[..]], "F": [[..]], "P_init": [[..]], "C": [[..]]},
//   "drone": {"steps": 100, "K_P": .., "K_D": .., "L_P": .., "L_D": .., "full_rate": false,
//             "max_iter": 10, "prune_slack": 1e-3, ...},
//   "simulate": {"steps": 10000, "burn_in": 100, "batches": 50},
//   "dump_subproblems": false
// }

class ConfigError : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

enum class WeightMode { uniform, airtime };

struct AirtimeLinks {
    double bandwidth = 1.0, tx_power = 1.0, noise_psd = 1.0, path_gain = 1.0;
    std::vector<double> ranges;  // one per sensor, or a single value for all
};

struct SimulateConfig {
    int steps = 10000;
    int burn_in = 100;
    int batches = 50;
};

struct RunConfig {
    std::string scenario = "heat";
    bool infinite = true;
    int T = 1;
    double beta = 1.0;
    std::vector<double> beta_grid;
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    WeightMode weights = WeightMode::uniform;
    AirtimeLinks links;
    CCPOptions ccp;
    HeatConfig heat;
    double scalar_a = 0.9, scalar_f = 1.0;
    Mat A, F, P_init, C;  // custom
    DroneConfig drone;
    int drone_steps = 100;
    SimulateConfig simulate;
    bool dump_subproblems = false;
};

namespace detail {

inline std::string where(const std::string& path) { return path.empty() ? "config" : path; }

inline void check_keys(const nlohmann::json& j, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(where(path) + " must be an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!ok.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where(path));
}

inline double get_number(const nlohmann::json& j, const std::string& path) {
    if (!j.is_number()) throw ConfigError(path + " must be a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) throw ConfigError(path + " must be finite");
    return v;
}

inline double get_positive(const nlohmann::json& j, const std::string& path) {
    const double v = get_number(j, path);
    if (!(v > 0.0)) throw ConfigError(path + " must be positive");
    return v;
}

inline int get_int(const nlohmann::json& j, const std::string& path, int lo) {
    if (!j.is_number_integer()) throw ConfigError(path + " must be an integer");
    const auto v = j.get<long long>();
    if (v < lo || v > 1000000000LL) throw ConfigError(path + " must be >= " + std::to_string(lo));
    return static_cast<int>(v);
}

inline bool get_bool(const nlohmann::json& j, const std::string& path) {
    if (!j.is_boolean()) throw ConfigError(path + " must be true or false");
    return j.get<bool>();
}

inline std::string get_string(const nlohmann::json& j, const std::string& path) {
    if (!j.is_string()) throw ConfigError(path + " must be a string");
    return j.get<std::string>();
}

inline Mat get_matrix(const nlohmann::json& j, const std::string& path) {
    if (!j.is_array() || j.empty()) throw ConfigError(path + " must be a non-empty array of rows");
    const auto rows = j.size();
    std::size_t cols = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (!j[r].is_array() || j[r].empty()) throw ConfigError(path + " rows must be non-empty arrays");
        if (r == 0) cols = j[r].size();
        if (j[r].size() != cols) throw ConfigError(path + " rows must have equal length");
    }
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            m(r, c) = get_number(j[r][c], path + "[" + std::to_string(r) + "][" + std::to_string(c) + "]");
    return m;
}

// "line L, column C" for a byte offset into text (1-based, as reported by the parser).
inline std::string line_column(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t k = 0; k + 1 < byte && k < text.size(); ++k) {
        if (text[k] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
    using namespace detail;
    check_keys(j, "", {"scenario", "horizon", "beta", "beta_grid", "seed", "out_dir", "weights", "tolerances", "heat",
                       "scalar", "custom", "drone", "simulate", "dump_subproblems"});
    RunConfig c;
    if (j.contains("scenario")) c.scenario = get_string(j["scenario"], "scenario");
    if (c.scenario != "heat" && c.scenario != "drone" && c.scenario != "scalar" && c.scenario != "custom")
        throw ConfigError("scenario must be one of heat, drone, scalar, custom");
    if (j.contains("horizon")) {
        const auto& h = j["horizon"];
        check_keys(h, "horizon", {"mode", "T"});
        const std::string mode = h.contains("mode") ? get_string(h["mode"], "horizon.mode") : "infinite";
        if (mode == "infinite") {
            if (h.contains("T")) throw ConfigError("horizon.T is only allowed with mode 'finite'");
        } else if (mode == "finite") {
            c.infinite = false;
            if (!h.contains("T")) throw ConfigError("horizon.T is required with mode 'finite'");
            c.T = get_int(h["T"], "horizon.T", 1);
        } else {
            throw ConfigError("horizon.mode must be 'infinite' or 'finite'");
        }
    }
    if (j.contains("beta")) {
        c.beta = get_number(j["beta"], "beta");
        if (c.beta < 0.0) throw ConfigError("beta must be non-negative");
    }
    if (j.contains("beta_grid")) {
        if (!j["beta_grid"].is_array()) throw ConfigError("beta_grid must be an array");
        for (std::size_t k = 0; k < j["beta_grid"].size(); ++k) {
            const double b = get_number(j["beta_grid"][k], "beta_grid[" + std::to_string(k) + "]");
            if (b < 0.0) throw ConfigError("beta_grid entries must be non-negative");
            c.beta_grid.push_back(b);
        }
    }
    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned()) throw ConfigError("seed must be a non-negative integer");
        c.seed = j["seed"].get<std::uint64_t>();
    }
    if (j.contains("out_dir")) c.out_dir = get_string(j["out_dir"], "out_dir");
    if (j.contains("weights")) {
        const auto& w = j["weights"];
        check_keys(w, "weights", {"mode", "bandwidth", "tx_power", "noise_psd", "ranges", "path_gain"});
        const std::string mode = w.contains("mode") ? get_string(w["mode"], "weights.mode") : "uniform";
        if (mode == "uniform") {
            if (w.size() > (w.contains("mode") ? 1u : 0u)) throw ConfigError("uniform weights take no link parameters");
        } else if (mode == "airtime") {
            c.weights = WeightMode::airtime;
            auto& L = c.links;
            if (w.contains("bandwidth")) L.bandwidth = get_positive(w["bandwidth"], "weights.bandwidth");
            if (w.contains("tx_power")) L.tx_power = get_positive(w["tx_power"], "weights.tx_power");
            if (w.contains("noise_psd")) L.noise_psd = get_positive(w["noise_psd"], "weights.noise_psd");
            if (w.contains("path_gain")) L.path_gain = get_positive(w["path_gain"], "weights.path_gain");
            if (!w.contains("ranges")) throw ConfigError("airtime weights need weights.ranges");
            if (w["ranges"].is_array()) {
                for (std::size_t k = 0; k < w["ranges"].size(); ++k)
                    L.ranges.push_back(get_positive(w["ranges"][k], "weights.ranges[" + std::to_string(k) + "]"));
                if (L.ranges.empty()) throw ConfigError("weights.ranges must not be empty");
            } else {
                L.ranges.push_back(get_positive(w["ranges"], "weights.ranges"));
            }
        } else {
            throw ConfigError("weights.mode must be 'uniform' or 'airtime'");
        }
    }
    if (j.contains("tolerances")) {
        const auto& t = j["tolerances"];
        check_keys(t, "tolerances", {"ccp", "max_iter", "opt", "abs", "feas", "prune"});
        if (t.contains("ccp")) c.ccp.tolerance = get_positive(t["ccp"], "tolerances.ccp");
        if (t.contains("max_iter")) c.ccp.max_iter = get_int(t["max_iter"], "tolerances.max_iter", 1);
        if (t.contains("opt")) c.ccp.solver.opt_tol = get_positive(t["opt"], "tolerances.opt");
        if (t.contains("abs")) {
            c.ccp.solver.abs_tol = get_number(t["abs"], "tolerances.abs");
            if (c.ccp.solver.abs_tol < 0.0) throw ConfigError("tolerances.abs must be non-negative");
        }
        if (t.contains("feas")) c.ccp.feas_tol = c.ccp.solver.feas_tol = get_positive(t["feas"], "tolerances.feas");
        if (t.contains("prune")) c.ccp.prune = get_bool(t["prune"], "tolerances.prune");
    }
    if (j.contains("heat")) {
        const auto& h = j["heat"];
        check_keys(h, "heat", {"nodes", "diffusivity", "segment_length", "heat_model_variant"});
        if (h.contains("nodes")) c.heat.nodes = get_int(h["nodes"], "heat.nodes", 2);
        if (h.contains("diffusivity")) c.heat.diffusivity = get_positive(h["diffusivity"], "heat.diffusivity");
        if (h.contains("segment_length"))
            c.heat.segment_length = get_positive(h["segment_length"], "heat.segment_length");
        if (h.contains("heat_model_variant")) {
            const auto v = get_string(h["heat_model_variant"], "heat.heat_model_variant");
            if (v == "as_printed")
                c.heat.variant = HeatModelVariant::as_printed;
            else if (v == "identity_minus_laplacian")
                c.heat.variant = HeatModelVariant::identity_minus_laplacian;
            else
                throw ConfigError("heat.heat_model_variant must be 'as_printed' or 'identity_minus_laplacian'");
        }
    }
    if (j.contains("scalar")) {
        const auto& s = j["scalar"];
        check_keys(s, "scalar", {"a", "f"});
        if (s.contains("a")) c.scalar_a = get_number(s["a"], "scalar.a");
        if (s.contains("f")) c.scalar_f = get_number(s["f"], "scalar.f");
        if (c.scalar_f == 0.0) throw ConfigError("scalar.f must be non-zero");
    }
    if (j.contains("custom")) {
        const auto& s = j["custom"];
        check_keys(s, "custom", {"A", "F", "P_init", "C"});
        for (const char* k : {"A", "F", "P_init", "C"})
            if (!s.contains(k)) throw ConfigError(std::string("custom.") + k + " is required");
        c.A = get_matrix(s["A"], "custom.A");
        c.F = get_matrix(s["F"], "custom.F");
        c.P_init = get_matrix(s["P_init"], "custom.P_init");
        c.C = get_matrix(s["C"], "custom.C");
    } else if (c.scenario == "custom") {
        throw ConfigError("scenario 'custom' needs a custom section");
    }
    if (j.contains("drone")) {
        const auto& d = j["drone"];
        check_keys(d, "drone", {"steps", "K_P", "K_D", "L_P", "L_D", "noise_scale", "perfect_init", "static_drones",
                                "full_rate", "ring_radius", "target_spacing", "target_offset", "init_speed",
                                "divergence_trace", "max_iter", "prune_slack"});
        auto& D = c.drone;
        if (d.contains("steps")) c.drone_steps = get_int(d["steps"], "drone.steps", 1);
        for (auto [key, dst] : {std::pair<const char*, double*>{"K_P", &D.K_P}, {"K_D", &D.K_D}, {"L_P", &D.L_P},
                                {"L_D", &D.L_D}, {"init_speed", &D.init_speed}})
            if (d.contains(key)) *dst = get_number(d[key], std::string("drone.") + key);
        for (auto [key, dst] : {std::pair<const char*, double*>{"ring_radius", &D.ring_radius},
                                {"target_spacing", &D.target_spacing}, {"target_offset", &D.target_offset},
                                {"divergence_trace", &D.divergence_trace}})
            if (d.contains(key)) *dst = get_positive(d[key], std::string("drone.") + key);
        if (d.contains("noise_scale")) {
            D.noise_scale = get_number(d["noise_scale"], "drone.noise_scale");
            if (D.noise_scale < 0.0) throw ConfigError("drone.noise_scale must be non-negative");
        }
        if (d.contains("perfect_init")) D.perfect_init = get_bool(d["perfect_init"], "drone.perfect_init");
        if (d.contains("static_drones")) D.static_drones = get_bool(d["static_drones"], "drone.static_drones");
        if (d.contains("full_rate")) D.full_rate = get_bool(d["full_rate"], "drone.full_rate");
        if (d.contains("max_iter")) D.ccp.max_iter = get_int(d["max_iter"], "drone.max_iter", 1);
        if (d.contains("prune_slack")) {
            D.ccp.prune_slack = get_number(d["prune_slack"], "drone.prune_slack");
            if (D.ccp.prune_slack < 0.0) throw ConfigError("drone.prune_slack must be non-negative");
        }
    }
    if (j.contains("simulate")) {
        const auto& s = j["simulate"];
        check_keys(s, "simulate", {"steps", "burn_in", "batches"});
        if (s.contains("steps")) c.simulate.steps = get_int(s["steps"], "simulate.steps", 1);
        if (s.contains("burn_in")) c.simulate.burn_in = get_int(s["burn_in"], "simulate.burn_in", 0);
        if (s.contains("batches")) c.simulate.batches = get_int(s["batches"], "simulate.batches", 2);
        if (c.simulate.burn_in >= c.simulate.steps) throw ConfigError("simulate.burn_in must be below simulate.steps");
    }
    if (j.contains("dump_subproblems")) c.dump_subproblems = get_bool(j["dump_subproblems"], "dump_subproblems");
    if (c.weights == WeightMode::airtime && c.scenario == "drone")
        throw ConfigError("airtime weights are not supported for the drone scenario");
    // The drone run shares the tolerances but keeps its own iteration cap and pruning slack.
    const int drone_iter = c.drone.ccp.max_iter;
    const double drone_slack = c.drone.ccp.prune_slack;
    c.drone.ccp = c.ccp;
    c.drone.ccp.max_iter = drone_iter;
    c.drone.ccp.prune_slack = drone_slack;
    return c;
}

/// Parses JSON text; syntax errors carry line and column.
inline RunConfig parse_config_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("malformed JSON at " + detail::line_column(text, e.byte) + ": " + e.what());
    }
    return parse_config(j);
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

/// Sensor weights for M sensors.
inline Vec config_weights(const RunConfig& c, int M) {
    if (c.weights == WeightMode::uniform) return Vec::Ones(M);
    const auto& L = c.links;
    if (L.ranges.size() != 1 && static_cast<int>(L.ranges.size()) != M)
        throw ConfigError("weights.ranges needs 1 or " + std::to_string(M) + " entries");
    Vec cap(M);
    for (int i = 0; i < M; ++i) {
        const double r = L.ranges.size() == 1 ? L.ranges[0] : L.ranges[static_cast<std::size_t>(i)];
        cap(i) = capacity(L.bandwidth, snr(r, L.tx_power, L.bandwidth, L.noise_psd, L.path_gain));
    }
    return airtime_weights(cap);
}

/// The static program described by a heat, scalar or custom config at budget beta.
inline DCProgram config_program(const RunConfig& c, double beta) {
    GaussMarkovSystem sys = [&] {
        if (c.scenario == "heat")
            return build_heat_system(c.heat.nodes, c.heat.diffusivity, c.heat.segment_length, c.heat.variant);
        if (c.scenario == "scalar") {
            if (!(std::abs(c.scalar_a) < 1.0)) throw UnsupportedDomain("scalar scenario needs |a| < 1");
            return GaussMarkovSystem(Mat::Constant(1, 1, c.scalar_a), Mat::Constant(1, 1, c.scalar_f),
                                     Mat::Constant(1, 1, c.scalar_f * c.scalar_f / (1 - c.scalar_a * c.scalar_a)));
        }
        if (c.scenario == "custom") return GaussMarkovSystem(c.A, c.F, c.P_init);
        throw ConfigError("scenario '" + c.scenario + "' has no static program");
    }();
    const Mat C = c.scenario == "heat"     ? Mat(Mat::Identity(c.heat.nodes, c.heat.nodes))
                  : c.scenario == "scalar" ? Mat(Mat::Ones(1, 1))
                                           : c.C;
    SensorBank bank(C, config_weights(c, static_cast<int>(C.rows())));
    return c.infinite ? DCProgram::infinite(sys, bank, beta) : DCProgram::finite(sys, bank, c.T, beta);
}

}  // namespace ratealloc
