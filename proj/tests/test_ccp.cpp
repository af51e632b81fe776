#include <gtest/gtest.h>

#include "ratealloc/ccp.hpp"
#include "ratealloc/rng.hpp"

using namespace ratealloc;

namespace {

Mat m1(double v) { return Mat::Constant(1, 1, v); }

GaussMarkovSystem scalar_sys(double a, double f) { return {m1(a), m1(f), m1(f * f / (1 - a * a))}; }

GaussMarkovSystem random_system(CounterRng& rng, int n) {
    Mat A(n, n), F(n, n);
    for (int i = 0; i < n * n; ++i) {
        A(i / n, i % n) = 0.5 * rng.normal() / std::sqrt(double(n));
        F(i / n, i % n) = 0.3 * rng.normal();
    }
    F += Mat::Identity(n, n);
    return {A, F, Mat::Identity(n, n)};
}

SensorBank random_bank(CounterRng& rng, int M, int n) {
    Mat C(M, n);
    Vec alpha(M);
    for (int i = 0; i < M; ++i) {
        for (int j = 0; j < n; ++j) C(i, j) = rng.normal();
        alpha(i) = 0.5 + rng.uniform();
    }
    return {C, alpha};
}

}  // namespace

TEST(Ccp, ScalarMatchesClosedForm) {
    auto prog = DCProgram::infinite(scalar_sys(0.9, 1.0), SensorBank::uniform(m1(1.0)), 2.0);
    auto r = run_ccp(prog);
    EXPECT_NEAR(r.mse, 2.0, 1e-4);
    // log2(a^2 + f^2 / beta) = log2(1.31) per unit of 2 x rate
    EXPECT_NEAR(2.0 * r.objective, std::log2(1.31), 1e-4);
    EXPECT_NEAR(2.0 * r.objective, 0.3896, 1e-4);
    EXPECT_NEAR(r.allocation.V(0, 0), 1.0 / (0.5 - 1.0 / 2.62), 1e-3);
    EXPECT_NEAR(r.allocation.V(0, 0), 8.4516, 1e-3);
}

TEST(Ccp, ZeroRateBranch) {
    const double thresh = 1.0 / (1.0 - 0.81);
    EXPECT_NEAR(thresh, 5.2632, 1e-4);
    auto prog = DCProgram::infinite(scalar_sys(0.9, 1.0), SensorBank::uniform(m1(1.0)), thresh);
    auto r = run_ccp(prog);
    EXPECT_TRUE(r.trace.zero_rate);
    EXPECT_EQ(r.allocation.support_size(), 0);
    EXPECT_EQ(r.objective, 0.0);
    // Just below the threshold the sensor is needed.
    auto r2 = run_ccp(prog.with_beta(thresh * 0.99));
    EXPECT_EQ(r2.allocation.support_size(), 1);
}

TEST(Ccp, RejectsEmptyProgram) {
    EXPECT_THROW(
        {
            auto prog = DCProgram::infinite(scalar_sys(0.9, 1.0), SensorBank::uniform(Mat(0, 1)), 1.0);
            run_ccp(prog);
        },
        InvalidArgument);
}

TEST(Ccp, InfeasibleBudgetPropagates) {
    auto prog = DCProgram::infinite(scalar_sys(0.9, 1.0), SensorBank::uniform(m1(1.0)), 0.0);
    EXPECT_THROW(run_ccp(prog), InfeasibleBudget);
}

TEST(Ccp, DescentAndFeasibility) {
    CounterRng rng(11);
    for (int trial = 0; trial < 6; ++trial) {
        const int n = 1 + trial % 3, M = 2 + trial % 3;
        auto sys = random_system(rng, n);
        auto bank = random_bank(rng, M, n);
        const bool inf = trial % 2 == 1;
        DCProgram prog = inf ? DCProgram::infinite(sys, bank, 1.0) : DCProgram::finite(sys, bank, 3, 1.0);
        const double lo = min_achievable_mse(prog), hi = zero_rate_mse(prog);
        prog = prog.with_beta(lo + 0.3 * (std::min(hi, 10.0 * n) - lo));
        auto r = run_ccp(prog);
        EXPECT_TRUE(r.trace.all_feasible()) << "trial " << trial;
        EXPECT_LE(r.trace.worst_increase(), 1e-8) << "trial " << trial;
        EXPECT_LE(r.mse, prog.beta() * (1 + 1e-6));
        EXPECT_LE(r.trace.iterations(0), 100);
        EXPECT_NEAR(r.objective, true_cost_bits(prog, r.allocation.delta), 1e-9);
    }
}

TEST(Ccp, FixedPointConsistency) {
    // Decoupled states, one sensor each: every sensor stays in the support
    // and CCP converges linearly.
    Mat A(2, 2);
    A << 0.5, 0.0, 0.0, -0.3;
    GaussMarkovSystem sys(A, Mat::Identity(2, 2), Mat::Identity(2, 2));
    auto prog = DCProgram::infinite(sys, SensorBank(Mat::Identity(2, 2), Vec(Eigen::Vector2d(1.0, 2.0))), 1.0);
    prog = prog.with_beta(0.5 * (min_achievable_mse(prog) + zero_rate_mse(prog)));
    CCPOptions opt;
    opt.prune = false;
    auto r = run_ccp(prog, opt);
    EXPECT_EQ(r.trace.termination, "tolerance");
    auto rep = solve_subproblem(prog, r.allocation.delta, std::nullopt, std::nullopt, opt.solver);
    EXPECT_NEAR(true_cost_bits(prog, rep.delta), r.objective, opt.tolerance);
}

TEST(Ccp, TraceCsv) {
    auto prog = DCProgram::infinite(scalar_sys(0.9, 1.0), SensorBank::uniform(m1(1.0)), 2.0);
    auto r = run_ccp(prog);
    std::ostringstream os;
    r.trace.write_csv(os);
    const std::string s = os.str();
    EXPECT_EQ(s.substr(0, s.find('\n')), "round,iteration,objective_bits,surrogate_bits,support,mse,feasible,newton_steps");
    EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), static_cast<long>(r.trace.rows.size()) + 1);
}

TEST(Ccp, PrunesUselessSensor) {
    // Sensor 1 sees the state through a tiny gain; its information is
    // cheaper to get from sensor 0.
    Mat C(2, 1);
    C << 1.0, 1e-3;
    auto prog = DCProgram::infinite(scalar_sys(0.9, 1.0), SensorBank::uniform(C), 2.0);
    auto r = run_ccp(prog);
    EXPECT_TRUE(r.allocation.support(0, 0));
    EXPECT_FALSE(r.allocation.support(0, 1));
    EXPECT_LE(r.mse, 2.0 * (1 + 1e-6));
    EXPECT_NEAR(r.mse, 2.0, 1e-4);
}

TEST(PerStep, StaticSystemSettles) {
    CounterRng rng(13);
    auto sys = random_system(rng, 2);
    auto bank = random_bank(rng, 3, 2);
    auto steps = run_per_step(sys, [&](int) { return bank.C(); }, bank.alpha(), 25, 1.5);
    for (const auto& s : steps) EXPECT_FALSE(s.flagged) << s.message;
    const Mat& a = steps[23].allocation.delta;
    const Mat& b = steps[24].allocation.delta;
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-5 * std::max(1.0, a.maxCoeff()));
}

TEST(PerStep, WarmEqualsCold) {
    CounterRng rng(14);
    auto sys = random_system(rng, 2);
    auto bank = random_bank(rng, 3, 2);
    auto warm = run_per_step(sys, [&](int) { return bank.C(); }, bank.alpha(), 6, 1.5, {}, true);
    auto cold = run_per_step(sys, [&](int) { return bank.C(); }, bank.alpha(), 6, 1.5, {}, false);
    for (int t = 0; t < 6; ++t) {
        EXPECT_NEAR(warm[t].objective, cold[t].objective, 1e-6) << "step " << t;
        EXPECT_LE(warm[t].mse, 1.5 * (1 + 1e-6));
    }
}

TEST(PerStep, InfeasibleStepFallsBack) {
    Mat P = Mat::Identity(2, 2);
    PerStepAllocator alloc(1e-9);
    Mat C(1, 2);
    C << 1.0, 0.0;  // the second coordinate is unobservable in one step
    auto s = alloc.allocate(P, C, Vec::Ones(1));
    EXPECT_TRUE(s.flagged);
    EXPECT_EQ(s.allocation.support_size(), 1);
}
