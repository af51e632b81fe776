#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "ratealloc/config.hpp"

namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code = -1;
    std::string out, err;
};

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("rate_alloc_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    fs::path write(const std::string& name, const std::string& text) {
        std::ofstream(dir_ / name) << text;
        return dir_ / name;
    }

    CliRun run(const std::string& args) {
        const auto o = dir_ / "stdout.txt", e = dir_ / "stderr.txt";
        const std::string cmd = std::string(RATE_ALLOC_CLI) + " " + args + " >" + o.string() + " 2>" + e.string();
        const int status = std::system(cmd.c_str());
        CliRun r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = slurp(o);
        r.err = slurp(e);
        return r;
    }

    static std::string slurp(const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    static std::string header(const fs::path& p) {
        const std::string s = slurp(p);
        return s.substr(0, s.find('\n'));
    }

    fs::path dir_;
};

const char* kSmallHeat = R"({"scenario": "heat", "beta": 0.1, "heat": {"nodes": 8},
                             "simulate": {"steps": 3000, "burn_in": 50}})";

}  // namespace

TEST_F(Cli, SolveWritesThreeCsvs) {
    const auto cfg = write("heat.json", kSmallHeat);
    const auto out = dir_ / "out";
    auto r = run("solve --config " + cfg.string() + " --out " + out.string());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(header(out / "allocation.csv"), "t,sensor,delta,V,Delta,support");
    EXPECT_EQ(header(out / "rates.csv"), "t,sensor,mi_bits,empirical_bits");
    EXPECT_EQ(header(out / "ccp_trace.csv"),
              "round,iteration,objective_bits,surrogate_bits,support,mse,feasible,newton_steps");
    EXPECT_NE(r.out.find("termination="), std::string::npos);
}

TEST_F(Cli, InfeasibleBudgetExitsTwo) {
    const auto cfg = write("heat.json", kSmallHeat);
    auto r = run("solve --config " + cfg.string() + " --beta 0 --out " + (dir_ / "o").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("minimum achievable MSE"), std::string::npos) << r.err;
}

TEST_F(Cli, MalformedJsonExitsOneWithPosition) {
    const auto cfg = write("bad.json", "{\n  \"beta\": 0.1,\n  \"heat\": {\"nodes\": 8,}\n}");
    auto r = run("solve --config " + cfg.string());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("line 3, column"), std::string::npos) << r.err;
    const auto cfg2 = write("unknown.json", R"({"beta": 0.1, "colour": "red"})");
    r = run("solve --config " + cfg2.string());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("colour"), std::string::npos);
    r = run("solve --config " + (dir_ / "missing.json").string());
    EXPECT_EQ(r.code, 1);
    r = run("frobnicate");
    EXPECT_EQ(r.code, 1);
}

TEST_F(Cli, ByteIdenticalReruns) {
    const auto cfg = write("heat.json", kSmallHeat);
    const auto a = dir_ / "a", b = dir_ / "b";
    for (const auto& d : {a, b}) {
        ASSERT_EQ(run("solve --config " + cfg.string() + " --out " + d.string()).code, 0);
        ASSERT_EQ(run("simulate --config " + cfg.string() + " --seed 5 --out " + d.string()).code, 0);
    }
    for (const char* f : {"allocation.csv", "rates.csv", "ccp_trace.csv", "empirical_rates.csv", "mse.csv"})
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
    ASSERT_EQ(run("simulate --config " + cfg.string() + " --seed 6 --out " + b.string()).code, 0);
    EXPECT_NE(slurp(a / "mse.csv"), slurp(b / "mse.csv"));
}

TEST_F(Cli, SimulateZeroSupportIsOpenLoop) {
    const auto cfg = write("s.json", R"({"scenario": "scalar", "beta": 6, "scalar": {"a": 0.9, "f": 1},
                                         "simulate": {"steps": 200, "burn_in": 0}})");
    const auto out = dir_ / "o";
    ASSERT_EQ(run("solve --config " + cfg.string() + " --out " + out.string()).code, 0);
    ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + out.string()).code, 0);
    std::ifstream in(out / "empirical_rates.csv");
    std::string line;
    std::getline(in, line);
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        EXPECT_EQ(line.substr(line.rfind(',') + 1), "0");
    }
    EXPECT_EQ(rows, 200);
    std::ifstream m(out / "mse.csv");
    std::getline(m, line);
    std::getline(m, line);
    // trace_p_filt equals the stationary open-loop variance 1 / (1 - 0.81)
    EXPECT_NEAR(std::stod(line.substr(line.rfind(',') + 1)), 1.0 / 0.19, 1e-9);
}

TEST_F(Cli, SweepGridAndDedup) {
    const auto cfg = write("heat.json", R"({"scenario": "heat", "heat": {"nodes": 6},
                                            "beta_grid": [1, 10, 100, 220, 10]})");
    const auto out = dir_ / "o";
    auto r = run("sweep --config " + cfg.string() + " --out " + out.string());
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string s = slurp(out / "support_vs_beta.csv");
    EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 5);
    EXPECT_EQ(header(out / "support_vs_beta.csv"), "beta,support,objective_bits,mse,status");
    r = run("sweep --config " + cfg.string() + " --sweep 1:220:0 --out " + out.string());
    EXPECT_EQ(r.code, 1);
    r = run("sweep --config " + cfg.string() + " --sweep 1:220 --out " + out.string());
    EXPECT_EQ(r.code, 1);
    r = run("sweep --config " + cfg.string() + " --sweep 1:220:3 --out " + out.string());
    EXPECT_EQ(r.code, 0);
    const std::string s3 = slurp(out / "support_vs_beta.csv");
    EXPECT_EQ(std::count(s3.begin(), s3.end(), '\n'), 4);
}

TEST_F(Cli, SubproblemDumpsRoundTrip) {
    const auto cfg = write("s.json", R"({"scenario": "scalar", "beta": 2, "dump_subproblems": true})");
    const auto out = dir_ / "o";
    ASSERT_EQ(run("solve --config " + cfg.string() + " --out " + out.string()).code, 0);
    int files = 0;
    for (const auto& e : fs::directory_iterator(out / "subproblems")) {
        std::ifstream in(e.path());
        auto j = nlohmann::json::parse(in);
        EXPECT_EQ(j["format"], "ratealloc-subproblem-1");
        auto sub = ratealloc::subproblem_from_json(j);
        EXPECT_GT(sub.nvar, 0);
        ++files;
    }
    EXPECT_GE(files, 1);
}

TEST_F(Cli, DroneRun) {
    const auto cfg = write("d.json", R"({"scenario": "drone", "beta": 60, "drone": {"steps": 2}})");
    const auto out = dir_ / "o";
    auto r = run("solve --config " + cfg.string() + " --out " + out.string());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(header(out / "allocation.csv"), "t,sensor,label,delta,mi_bits,empirical_bits,flagged");
    EXPECT_EQ(header(out / "tracks.csv"), "t,kind,id,region,p_x,p_y");
    EXPECT_EQ(header(out / "mse.csv"), "t,trace_p_pred,trace_p_filt,sq_error,flagged,ccp_iterations");
}
