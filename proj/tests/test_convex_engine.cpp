#include <gtest/gtest.h>

#include "ratealloc/convex_engine.hpp"
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

TEST(Barrier, LogPlusLinearWithBox) {
    // min 2x - 3 log x  s.t. 0 <= x <= 10: optimum x = 3/2.
    ConvexSubproblem sub;
    sub.nvar = 1;
    sub.c = Vec::Constant(1, 2.0);
    sub.logs.push_back({0, 3.0});
    AffineBlock up;
    up.size = 1;
    up.add(-1, 0, 0, 10.0);
    up.add(0, 0, 0, -1.0);
    sub.blocks.push_back(up);
    auto rep = solve(sub, Vec::Constant(1, 5.0));
    ASSERT_EQ(rep.status, SolverStatus::optimal);
    EXPECT_NEAR(rep.x(0), 1.5, 1e-5);
    // The bound is active when it cuts the stationary point off.
    sub.blocks[0].terms[0].value = 1.0;
    rep = solve(sub, Vec::Constant(1, 0.5));
    EXPECT_NEAR(rep.x(0), 1.0, 1e-6);
}

TEST(Barrier, MatrixBlockCenter) {
    // min -log x1 - log x2 s.t. [[1, x1], [x1, 1]] >= 0, x2 <= x1: optimum x1 = 1/sqrt(2)... check KKT numerically.
    ConvexSubproblem sub;
    sub.nvar = 1;
    sub.c = Vec::Zero(1);
    sub.logs.push_back({0, 1.0});
    AffineBlock b;
    b.size = 2;
    b.add(-1, 0, 0, 1.0);
    b.add(-1, 1, 1, 4.0);
    b.add(0, 0, 1, 1.0);
    sub.blocks.push_back(b);
    auto rep = solve(sub, Vec::Constant(1, 0.1));
    ASSERT_EQ(rep.status, SolverStatus::optimal);
    EXPECT_NEAR(rep.x(0), 2.0, 1e-5);  // boundary x^2 = 4
    EXPECT_GE(rep.min_margin, -1e-9);
}

TEST(Phase1, GenericFindsInteriorPoint) {
    CounterRng rng(1);
    auto prog = DCProgram::finite(random_system(rng, 2), random_bank(rng, 2, 2), 2, 20.0);
    auto sub = linearize_subproblem(prog, Mat::Ones(2, 2));
    Vec x = phase1_generic(sub, Vec::Zero(sub.nvar));
    EXPECT_TRUE(strictly_feasible(sub, x));
}

TEST(Phase1, AnalyticPointAcceptedAtSlackBudget) {
    CounterRng rng(2);
    auto sys = random_system(rng, 3);
    auto bank = random_bank(rng, 3, 3);
    auto ss = steady_state_riccati(sys, bank.C(), Vec::Ones(3), RiccatiMethod::doubling);
    auto prog = DCProgram::infinite(sys, bank, 10.0 * ss.P_filt.trace());
    auto fp = phase1_feasible(prog);
    EXPECT_TRUE(strictly_feasible(linearize_subproblem(prog, Mat::Ones(1, 3)), fp.x));
    EXPECT_LE(fp.mse, prog.beta());
}

TEST(Phase1, ZeroBudgetIsInfeasible) {
    auto prog = DCProgram::infinite(scalar_sys(0.9, 1.0), SensorBank::uniform(m1(1.0)), 0.0);
    try {
        phase1_feasible(prog);
        FAIL() << "expected InfeasibleBudget";
    } catch (const InfeasibleBudget& e) {
        EXPECT_GT(e.min_achievable(), 0.0);
        EXPECT_LT(e.min_achievable(), 1e-9);
    }
}

TEST(Phase1, HeatTightBudgetIsFeasible) {
    auto sys = build_heat_system(60, 7.5e-7, 0.2459);
    auto prog = DCProgram::infinite(sys, SensorBank::uniform(Mat::Identity(60, 60)), 0.1);
    auto fp = phase1_feasible(prog);
    EXPECT_LT(fp.mse, 0.1);
}

TEST(Reduced, InfiniteGradientMatchesFiniteDifferences) {
    CounterRng rng(3);
    auto prog = DCProgram::infinite(random_system(rng, 3), random_bank(rng, 4, 3), 10.0);
    Mat dh(1, 4);
    dh << 0.5, 1.5, 0.8, 2.0;
    ReducedModel model(prog, dh);
    Vec d = Eigen::Vector4d(0.7, 1.1, 0.3, 1.9);
    auto e = model.eval(d, true);
    for (int k = 0; k < 4; ++k) {
        const double h = 1e-6 * d(k);
        Vec dp = d, dm = d;
        dp(k) += h;
        dm(k) -= h;
        auto ep = model.eval(dp, false), em = model.eval(dm, false);
        EXPECT_NEAR(e.gJ(k), (ep.J - em.J) / (2 * h), 1e-6 * std::max(1.0, std::abs(e.gJ(k))));
        EXPECT_NEAR(e.gh(k), (ep.h - em.h) / (2 * h), 1e-6 * std::max(1.0, std::abs(e.gh(k))));
    }
}

TEST(Reduced, FiniteGradientMatchesFiniteDifferences) {
    CounterRng rng(4);
    auto prog = DCProgram::finite(random_system(rng, 3), random_bank(rng, 3, 3), 4, 10.0);
    Mat dh = Mat::Constant(4, 3, 0.9);
    ReducedModel model(prog, dh);
    Vec d(12);
    for (int k = 0; k < 12; ++k) d(k) = 0.2 + 2.0 * rng.uniform();
    auto e = model.eval(d, true);
    for (int k = 0; k < 12; ++k) {
        const double h = 1e-6 * d(k);
        Vec dp = d, dm = d;
        dp(k) += h;
        dm(k) -= h;
        auto ep = model.eval(dp, false), em = model.eval(dm, false);
        EXPECT_NEAR(e.gJ(k), (ep.J - em.J) / (2 * h), 1e-6 * std::max(1.0, std::abs(e.gJ(k))));
        EXPECT_NEAR(e.gh(k), (ep.h - em.h) / (2 * h), 1e-6 * std::max(1.0, std::abs(e.gh(k))));
    }
}

TEST(Reduced, SingleStepHessianMatchesFiniteDifferences) {
    CounterRng rng(5);
    auto prog = DCProgram::finite(random_system(rng, 3), random_bank(rng, 5, 3), 1, 10.0);
    ReducedModel model(prog, Mat::Constant(1, 5, 0.6));
    Vec d(5);
    for (int k = 0; k < 5; ++k) d(k) = 0.2 + rng.uniform();
    Mat HJ, Hh;
    model.hessians(d, HJ, Hh);
    auto e = model.eval(d, true);
    for (int k = 0; k < 5; ++k) {
        const double h = 1e-6 * d(k);
        Vec dp = d;
        dp(k) += h;
        auto ep = model.eval(dp, true);
        for (int j = 0; j < 5; ++j) {
            EXPECT_NEAR(HJ(j, k), (ep.gJ(j) - e.gJ(j)) / h, 1e-4 * std::max(1.0, std::abs(HJ(j, k))));
            EXPECT_NEAR(Hh(j, k), (ep.gh(j) - e.gh(j)) / h, 1e-4 * std::max(1.0, std::abs(Hh(j, k))));
        }
    }
}

TEST(Routes, AgreeOnSmallInstances) {
    CounterRng rng(6);
    for (int trial = 0; trial < 6; ++trial) {
        const int n = 1 + trial % 2, M = 2;
        const bool inf = trial % 2 == 0;
        auto sys = random_system(rng, n);
        auto bank = random_bank(rng, M, n);
        const double open = inf ? steady_state_riccati(sys, Mat(0, n), Vec(0), RiccatiMethod::doubling).P_filt.trace()
                                : 0.0;
        auto prog = inf ? DCProgram::infinite(sys, bank, 0.6 * open)
                        : DCProgram::finite(sys, bank, 2, 0.5 * double(n));
        Mat dh = Mat::Constant(prog.horizon(), M, 1.0);
        SolverOptions lmi, red;
        lmi.route = Route::lmi;
        red.route = Route::reduced;
        auto a = solve_subproblem(prog, dh, std::nullopt, std::nullopt, lmi);
        auto b = solve_subproblem(prog, dh, std::nullopt, std::nullopt, red);
        ASSERT_EQ(a.status, SolverStatus::optimal) << a.message;
        ASSERT_EQ(b.status, SolverStatus::optimal) << b.message;
        EXPECT_NEAR(a.objective, b.objective, 1e-5 * std::max(1.0, std::abs(b.objective))) << "trial " << trial;
        EXPECT_LT((a.delta - b.delta).cwiseAbs().maxCoeff(), 1e-3 * std::max(1.0, b.delta.maxCoeff()));
    }
}

TEST(Routes, ScalarSubproblemHitsBudget) {
    // Linearized at the fixed point delta*, the surrogate still increases in
    // delta, so the optimum stays on the budget, P = beta.
    auto prog = DCProgram::infinite(scalar_sys(0.9, 1.0), SensorBank::uniform(m1(1.0)), 2.0);
    for (Route r : {Route::lmi, Route::reduced}) {
        SolverOptions o;
        o.route = r;
        auto rep = solve_subproblem(prog, m1(1.0 / 2.0 - 1.0 / 2.62), std::nullopt, std::nullopt, o);
        ASSERT_EQ(rep.status, SolverStatus::optimal);
        auto ch = covariance_chain(prog, rep.delta);
        EXPECT_NEAR(ch.mse, 2.0, 1e-5);
        EXPECT_NEAR(rep.delta(0, 0), 1.0 / 2.0 - 1.0 / 2.62, 1e-5);
    }
}
