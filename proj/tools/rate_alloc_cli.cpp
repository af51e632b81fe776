// rate_alloc: solve, simulate and sweep sensor rate allocations from a JSON config.
//
// Exit codes: 0 success, 1 error, 2 infeasible budget.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "ratealloc/ratealloc.hpp"

namespace fs = std::filesystem;
using namespace ratealloc;

namespace {

struct Overrides {
    std::string config, out, scenario, sweep, allocation;
    std::optional<double> beta;
    std::optional<std::uint64_t> seed;
};

RunConfig resolve(const Overrides& o) {
    RunConfig c = o.config.empty() ? parse_config(nlohmann::json::object()) : load_config(o.config);
    if (!o.scenario.empty()) {
        nlohmann::json j = {{"scenario", o.scenario}};
        c.scenario = parse_config(j).scenario;  // validates the name
    }
    if (o.beta) {
        if (!(*o.beta >= 0.0)) throw ConfigError("--beta must be non-negative");
        c.beta = *o.beta;
    }
    if (o.seed) c.seed = *o.seed;
    if (!o.out.empty()) c.out_dir = o.out;
    return c;
}

std::ofstream open_out(const fs::path& dir, const std::string& name) {
    fs::create_directories(dir);
    std::ofstream os(dir / name, std::ios::binary);
    if (!os) throw Error("cannot write " + (dir / name).string());
    return os;
}

void dump_subproblems(const DCProgram& prog, const CCPResult& r, const fs::path& dir) {
    // Round 0 expansion points: the start, then every iterate but the last.
    std::vector<Mat> points{Mat::Ones(prog.horizon(), prog.bank().M())};
    for (std::size_t k = 0; k + 1 < r.trace.rows.size(); ++k)
        if (r.trace.rows[k].round == 0) points.push_back(r.trace.iterates[k]);
    fs::create_directories(dir);
    for (std::size_t k = 0; k < points.size(); ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "subproblem_%03zu.json", k);
        auto os = open_out(dir, name);
        os << subproblem_to_json(linearize_subproblem(prog, points[k])).dump(1) << '\n';
    }
}

int cmd_solve(const RunConfig& c) {
    const fs::path out(c.out_dir);
    if (c.scenario == "drone") {
        auto log = drone_demo(c.drone_steps, c.beta, c.seed, c.drone);
        auto a = open_out(out, "allocation.csv");
        log.write_allocation_csv(a);
        auto m = open_out(out, "mse.csv");
        log.write_mse_csv(m);
        auto t = open_out(out, "tracks.csv");
        log.write_tracks_csv(t);
        int flagged = 0;
        for (const auto& s : log.steps) flagged += s.flagged;
        std::cout << "drone: " << log.steps.size() << " steps, " << log.distinct_supports()
                  << " distinct supports, " << flagged << " flagged steps\n";
        return 0;
    }
    const DCProgram prog = config_program(c, c.beta);
    CCPResult r;
    try {
        r = run_ccp(prog, c.ccp);
    } catch (const InfeasibleBudget& e) {
        std::cerr << "infeasible budget: " << e.what() << "\n"
                  << "minimum achievable MSE: " << std::setprecision(10) << e.min_achievable() << "\n";
        return 2;
    }
    auto a = open_out(out, "allocation.csv");
    write_allocation_csv(a, r.allocation);
    auto rt = open_out(out, "rates.csv");
    rate_report(prog, r.allocation.delta).write_csv(rt);
    auto tr = open_out(out, "ccp_trace.csv");
    r.trace.write_csv(tr);
    if (c.dump_subproblems) dump_subproblems(prog, r, out / "subproblems");
    std::cout << std::setprecision(10) << "objective_bits=" << r.objective << " mse=" << r.mse
              << " support=" << r.allocation.support_size() << " iterations=" << r.trace.iterations(0)
              << " termination=" << r.trace.termination << "\n";
    return 0;
}

int cmd_simulate(const RunConfig& c, const std::string& allocation) {
    if (c.scenario == "drone") throw ConfigError("simulate works on heat, scalar and custom scenarios");
    const fs::path out(c.out_dir);
    const fs::path src = allocation.empty() ? out / "allocation.csv" : fs::path(allocation);
    std::ifstream in(src, std::ios::binary);
    if (!in) throw Error("cannot open allocation " + src.string());
    const Mat V = read_allocation_csv(in);
    const DCProgram prog = config_program(c, c.beta);
    NetworkOptions o;
    o.seed = c.seed;
    o.steps = c.simulate.steps;
    o.burn_in = c.simulate.burn_in;
    o.batches = c.simulate.batches;
    auto r = simulate_network(prog.sys(), prog.bank(), V, o);
    auto e = open_out(out, "empirical_rates.csv");
    r.write_empirical_csv(e);
    auto m = open_out(out, "mse.csv");
    r.write_mse_csv(m);
    const Vec L = r.mean_lengths(), I = r.mean_mi();
    std::cout << std::setprecision(8) << "empirical_mse=" << r.empirical_mse() << " model_mse=" << r.model_mse()
              << " stderr=" << r.mse_stderr(o.batches) << "\n";
    for (int i = 0; i < L.size(); ++i)
        if (I(i) > 0.0 || L(i) > 0.0)
            std::cout << "sensor " << i << ": mean_bits=" << L(i) << " mi_bits=" << I(i)
                      << " upper=" << I(i) + kSandwichGap << "\n";
    return 0;
}

std::vector<double> parse_sweep(const std::string& text) {
    double lo = 0, hi = 0;
    int steps = 0;
    char c1 = 0, c2 = 0;
    std::istringstream ss(text);
    if (!(ss >> lo >> c1 >> hi >> c2 >> steps) || c1 != ':' || c2 != ':' || !ss.eof())
        throw ConfigError("--sweep expects LO:HI:STEPS");
    if (steps < 0 || !(lo >= 0.0) || !(hi >= lo)) throw ConfigError("--sweep needs 0 <= LO <= HI and STEPS >= 0");
    std::vector<double> g;
    for (int k = 0; k < steps; ++k) g.push_back(steps == 1 ? lo : lo + (hi - lo) * k / (steps - 1));
    return g;
}

int cmd_sweep(const RunConfig& c, const std::string& sweep) {
    if (c.scenario == "drone") throw ConfigError("sweep works on heat, scalar and custom scenarios");
    const auto grid = sweep.empty() ? c.beta_grid : parse_sweep(sweep);
    auto rows = sweep_support([&](double b) { return config_program(c, b); }, grid, thread_cap(), c.ccp);
    auto os = open_out(fs::path(c.out_dir), "support_vs_beta.csv");
    write_sweep_csv(os, rows);
    for (const auto& r : rows) std::cout << "beta=" << r.beta << " support=" << r.support << " " << r.status << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sensor rate allocation: solve, simulate, sweep"};
    app.require_subcommand(1);
    Overrides o;
    auto common = [&](CLI::App* s) {
        s->add_option("--config", o.config, "JSON run configuration");
        s->add_option("--out", o.out, "output directory");
        s->add_option("--seed", o.seed, "random seed");
        s->add_option("--beta", o.beta, "MSE budget");
        s->add_option("--scenario", o.scenario, "heat, drone, scalar or custom");
    };
    auto* solve = app.add_subcommand("solve", "run CCP; writes allocation.csv, rates.csv, ccp_trace.csv");
    common(solve);
    auto* simulate = app.add_subcommand("simulate", "ECDQ network run; writes empirical_rates.csv, mse.csv");
    common(simulate);
    simulate->add_option("--allocation", o.allocation, "allocation.csv (default OUT/allocation.csv)");
    auto* sweep = app.add_subcommand("sweep", "support size over a budget grid; writes support_vs_beta.csv");
    common(sweep);
    sweep->add_option("--sweep", o.sweep, "LO:HI:STEPS (overrides beta_grid)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    try {
        const RunConfig c = resolve(o);
        if (*solve) return cmd_solve(c);
        if (*simulate) return cmd_simulate(c, o.allocation);
        return cmd_sweep(c, o.sweep);
    } catch (const InfeasibleBudget& e) {
        std::cerr << "infeasible budget: " << e.what() << "\nminimum achievable MSE: " << e.min_achievable() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
