#pragma once

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ratealloc/convex_engine.hpp"

namespace ratealloc {

struct CCPOptions {
    double tolerance = 1e-6;  // absolute decrease of f^k in bits
    int max_iter = 100;
    std::optional<Mat> init_delta;  // default: delta_hat = 1 on the mask
    SolverOptions solver = [] {
        SolverOptions o;
        o.opt_tol = 1e-10;
        o.abs_tol = 1e-10;
        return o;
    }();
    bool prune = true;
    double prune_rel = 1e-6;   // delta < prune_rel * max(delta)
    double prune_snr = 0.05;   // delta * C P_pred C^T below this
    double prune_soft_rel = 1e-2;  // second candidate set when the first is empty
    double prune_slack = 0.0;  // a pruned round may end this much (relative) above the best
    int prune_rounds = 5;
    double feas_tol = 1e-9;    // relative budget tolerance for the per-iteration check
};

struct CCPIteration {
    int round = 0;            // 0: main run, r > 0: after the r-th pruning
    int iteration = 0;        // k within the round; 0 is the starting point
    double objective = 0.0;   // f^k: true DC objective at delta^k (bits)
    double surrogate = 0.0;   // linearized objective at the subproblem solution (bits)
    int support = 0;
    double mse = 0.0;
    bool feasible = true;
    SolverStatus status = SolverStatus::optimal;
    int newton_steps = 0;
    double wall_time = 0.0;
};

struct CCPTrace {
    std::vector<CCPIteration> rows;
    std::vector<Mat> iterates;  // delta^k, aligned with rows
    std::vector<SolverReport> reports;
    std::string termination;
    int accepted_round = 0;
    bool zero_rate = false;

    /// Largest increase f^k - f^{k-1} within any round (<= 0 for a descent trace).
    double worst_increase() const {
        double worst = -kInf;
        for (std::size_t k = 1; k < rows.size(); ++k)
            if (rows[k].round == rows[k - 1].round) worst = std::max(worst, rows[k].objective - rows[k - 1].objective);
        return worst;
    }
    bool all_feasible() const {
        for (const auto& r : rows)
            if (!r.feasible) return false;
        return true;
    }
    int iterations(int round = 0) const {
        int k = 0;
        for (const auto& r : rows)
            if (r.round == round) k = std::max(k, r.iteration);
        return k;
    }

    void write_csv(std::ostream& os) const {
        os << "round,iteration,objective_bits,surrogate_bits,support,mse,feasible,newton_steps\n";
        os.precision(12);
        for (const auto& r : rows)
            os << r.round << ',' << r.iteration << ',' << r.objective << ',' << r.surrogate << ',' << r.support << ','
               << r.mse << ',' << (r.feasible ? 1 : 0) << ',' << r.newton_steps << '\n';
    }
};

struct CCPResult {
    Allocation allocation;
    CCPTrace trace;
    double objective = 0.0;  // bits
    double mse = 0.0;
};

namespace detail {

inline int support_of(const Mat& d) {
    if (d.size() == 0) return 0;
    const double top = d.maxCoeff();
    int k = 0;
    for (int i = 0; i < d.size(); ++i)
        if (d(i) > 0.0 && d(i) >= 1e-6 * top) ++k;
    return k;
}

inline bool budget_ok(const DCProgram& prog, double mse, double tol) {
    return mse <= prog.beta() * (1.0 + tol) + tol;
}

struct RoundState {
    Mat delta;
    double objective = kInf;
    double mse = kInf;
};

// One CCP run (Algorithm 1) starting at delta_hat; appends to `trace`.
inline RoundState ccp_round(const DCProgram& prog, Mat delta_hat, bool start_is_iterate, int round,
                            const CCPOptions& opt, CCPTrace& trace) {
    RoundState st;
    std::optional<Vec> warm_x;
    std::optional<Mat> warm_delta;
    if (start_is_iterate) {
        warm_delta = delta_hat;
        const auto ch = covariance_chain(prog, delta_hat);
        st = {delta_hat, true_cost_bits(prog, delta_hat), ch.mse};
        CCPIteration row;
        row.round = round;
        row.objective = st.objective;
        row.surrogate = st.objective;
        row.support = support_of(delta_hat);
        row.mse = ch.mse;
        row.feasible = budget_ok(prog, ch.mse, opt.feas_tol);
        trace.rows.push_back(row);
        trace.iterates.push_back(delta_hat);
        trace.reports.emplace_back();
    }
    for (int k = 1; k <= opt.max_iter; ++k) {
        SolverReport rep = solve_subproblem(prog, delta_hat, warm_x, warm_delta, opt.solver);
        CCPIteration row;
        row.round = round;
        row.iteration = k;
        row.status = rep.status;
        row.newton_steps = rep.iterations;
        row.wall_time = rep.wall_time;
        if (rep.status != SolverStatus::optimal && rep.status != SolverStatus::max_iter) {
            trace.rows.push_back(row);
            trace.iterates.push_back(rep.delta);
            trace.reports.push_back(rep);
            throw NumericalFailure("CCP subproblem failed at iteration " + std::to_string(k) + ": " + rep.message);
        }
        const Mat d = rep.delta;
        const auto ch = covariance_chain(prog, d);
        row.objective = true_cost_bits(prog, d);
        row.surrogate = rep.objective / kLn2;
        row.support = support_of(d);
        row.mse = ch.mse;
        row.feasible = budget_ok(prog, ch.mse, opt.feas_tol);
        trace.rows.push_back(row);
        trace.iterates.push_back(d);
        trace.reports.push_back(rep);
        const double prev = st.objective;
        if (row.objective <= prev || !std::isfinite(prev)) st = {d, row.objective, ch.mse};
        if (std::isfinite(prev) && prev - row.objective <= opt.tolerance) {
            trace.termination = "tolerance";
            return st;
        }
        if (rep.route == Route::lmi)
            warm_x = rep.x;
        else
            warm_delta = d;
        delta_hat = d;
    }
    trace.termination = "max_iter";
    return st;
}

// Smallest s >= 1 with h(s * delta) <= beta (1 - margin); nullopt if none up to 1e8.
inline std::optional<Mat> rescale_to_budget(const DCProgram& prog, const Mat& delta, double margin) {
    const double target = prog.beta() * (1.0 - margin);
    auto h = [&](double s) {
        try {
            return covariance_chain(prog, s * delta).mse;
        } catch (const Error&) {
            return kInf;
        }
    };
    if (h(1.0) <= target) return delta;
    double lo = 0.0, hi = std::log(1e8);
    if (!(h(std::exp(hi)) <= target)) return std::nullopt;
    for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        (h(std::exp(mid)) <= target ? hi : lo) = mid;
    }
    return Mat(std::exp(hi) * delta);
}

inline Mask prune_candidates(const DCProgram& prog, const Mat& delta, const CCPOptions& opt) {
    const auto ch = covariance_chain(prog, delta);
    const Mat& C = prog.bank().C();
    const double top = delta.maxCoeff();
    Mask cut = Mask::Constant(delta.rows(), delta.cols(), false);
    for (int t = 0; t < delta.rows(); ++t)
        for (int i = 0; i < delta.cols(); ++i) {
            if (!prog.mask()(t, i)) continue;
            const double snr = delta(t, i) * (C.row(i) * ch.P_pred[t] * C.row(i).transpose())(0, 0);
            if (delta(t, i) < opt.prune_rel * top || snr < opt.prune_snr) cut(t, i) = true;
        }
    if (cut.any() || !(opt.prune_soft_rel > 0.0)) return cut;
    // Slow 1/k decay can leave idle sensors well above prune_rel; the
    // round is only kept if it does not raise the objective.
    for (int t = 0; t < delta.rows(); ++t)
        for (int i = 0; i < delta.cols(); ++i)
            if (prog.mask()(t, i) && delta(t, i) < opt.prune_soft_rel * top) cut(t, i) = true;
    return cut;
}

}  // namespace detail

/// Convex-concave procedure with post-convergence pruning of near-zero
/// sensors. Phase I failures propagate as InfeasibleBudget.
inline CCPResult run_ccp(const DCProgram& prog, const CCPOptions& opt = {}) {
    const auto& ix = prog.index();
    if (ix.M == 0) throw InvalidArgument("program has no sensors");
    if (opt.tolerance < 0.0 || opt.max_iter < 1) throw InvalidArgument("bad CCP tolerance or iteration cap");
    CCPResult res;
    if (detail::budget_ok(prog, zero_rate_mse(prog), opt.feas_tol)) {
        const Mat zero = Mat::Zero(ix.T, ix.M);
        res.allocation = extract_allocation(zero);
        res.mse = zero_rate_mse(prog);
        res.trace.zero_rate = true;
        res.trace.termination = "zero_rate";
        CCPIteration row;
        row.mse = res.mse;
        res.trace.rows.push_back(row);
        res.trace.iterates.push_back(zero);
        res.trace.reports.emplace_back();
        return res;
    }
    phase1_feasible(prog);  // throws InfeasibleBudget

    Mat dh = Mat::Zero(ix.T, ix.M);
    for (int t = 0; t < ix.T; ++t)
        for (int i = 0; i < ix.M; ++i)
            if (prog.mask()(t, i)) dh(t, i) = opt.init_delta ? (*opt.init_delta)(t, i) : 1.0;
    if (opt.init_delta) {
        if (opt.init_delta->rows() != ix.T || opt.init_delta->cols() != ix.M)
            throw InvalidArgument("init_delta has the wrong shape");
        for (int t = 0; t < ix.T; ++t)
            for (int i = 0; i < ix.M; ++i)
                if (prog.mask()(t, i) && !(dh(t, i) > 0.0)) throw InvalidArgument("init_delta must be positive");
    }

    auto best = detail::ccp_round(prog, dh, false, 0, opt, res.trace);
    std::string reason = res.trace.termination;
    DCProgram current = prog;
    for (int round = 1; opt.prune && round <= opt.prune_rounds; ++round) {
        const Mask cut = detail::prune_candidates(current, best.delta, opt);
        if (!cut.any()) break;
        const Mask keep = current.mask() && !cut;
        if (!keep.any()) break;
        Mat start = best.delta;
        for (int k = 0; k < start.size(); ++k)
            if (!keep(k)) start(k) = 0.0;
        DCProgram pruned = current.with_mask(keep);
        auto scaled = detail::rescale_to_budget(pruned, start, 1e-7);
        if (!scaled) break;
        const double start_obj = true_cost_bits(pruned, *scaled);
        if (!(start_obj < best.objective + 1.0)) break;  // far worse start: keep the sensors
        CCPTrace sub;
        auto st = detail::ccp_round(pruned, *scaled, true, round, opt, sub);
        for (std::size_t k = 0; k < sub.rows.size(); ++k) {
            res.trace.rows.push_back(sub.rows[k]);
            res.trace.iterates.push_back(sub.iterates[k]);
            res.trace.reports.push_back(sub.reports[k]);
        }
        const double allowed = best.objective + opt.tolerance + opt.prune_slack * std::abs(best.objective);
        if (!(st.objective <= allowed) || !detail::budget_ok(prog, st.mse, opt.feas_tol)) break;
        best = st;
        current = pruned;
        res.trace.accepted_round = round;
        reason = sub.termination;
    }
    res.trace.termination = reason;
    Mat final_delta = best.delta;
    for (int k = 0; k < final_delta.size(); ++k)
        if (!current.mask()(k)) final_delta(k) = 0.0;
    res.allocation = extract_allocation(final_delta);
    res.objective = best.objective;
    res.mse = best.mse;
    return res;
}

// ---------------------------------------------------------------------------
// Per-step allocation for time-varying sensing (one-step programs, T = 1).

struct StepAllocation {
    Allocation allocation;
    double mse = 0.0;        // trace P_filt under the allocation
    double objective = 0.0;  // bits
    bool flagged = false;    // infeasible step; fallback allocation used
    int ccp_iterations = 0;
    std::string message;
};

class PerStepAllocator {
public:
    PerStepAllocator(double beta, CCPOptions opt = {}) : beta_(beta), opt_(std::move(opt)) {
        if (!(beta > 0.0)) throw InvalidArgument("per-step budget must be positive");
    }

    /// Allocation for one step with predicted covariance P_pred and sensing rows C.
    StepAllocation allocate(const Mat& P_pred, const Mat& C, const Vec& alpha) {
        const int n = static_cast<int>(P_pred.rows());
        StepAllocation out;
        if (P_pred.trace() <= beta_ * (1.0 + opt_.feas_tol)) {
            // Nothing to send: the prior already meets the budget.
            out.allocation = extract_allocation(Mat::Zero(1, C.rows()));
            out.mse = P_pred.trace();
            previous_ = out.allocation.delta;
            return out;
        }
        GaussMarkovSystem sys(Mat::Identity(n, n), Mat::Identity(n, n), symmetrize(P_pred));
        DCProgram prog = DCProgram::finite(sys, SensorBank(C, alpha), 1, beta_);
        CCPOptions o = opt_;
        if (previous_ && previous_->cols() == C.rows()) {
            Mat init = *previous_;
            const double top = init.maxCoeff();
            if (top > 0.0)
                init = init.cwiseMax(1e-3 * top);
            else
                init.setOnes();
            o.init_delta = init;
        }
        try {
            auto r = run_ccp(prog, o);
            out.allocation = r.allocation;
            out.mse = r.mse;
            out.objective = r.objective;
            out.ccp_iterations = r.trace.iterations(0);
            previous_ = r.allocation.delta;
        } catch (const InfeasibleBudget& e) {
            out.flagged = true;
            out.message = e.what();
            Mat fb = previous_ && previous_->cols() == C.rows() ? Mat(2.0 * *previous_)
                                                                 : Mat::Constant(1, C.rows(), 1.0);
            fb = fb.cwiseMin(kMaxFallbackDelta);
            if (fb.maxCoeff() <= 0.0) fb.setConstant(1.0);
            out.allocation = extract_allocation(fb);
            out.mse = covariance_chain(prog, fb).mse;
            out.objective = true_cost_bits(prog, fb);
            previous_ = fb;
        }
        return out;
    }

    void reset() { previous_.reset(); }
    const std::optional<Mat>& previous() const { return previous_; }

    static constexpr double kMaxFallbackDelta = 1e8;

private:
    double beta_;
    CCPOptions opt_;
    std::optional<Mat> previous_;
};

/// Per-step allocation along a Gaussian-model covariance trajectory with
/// time-varying sensing C_of(t).
inline std::vector<StepAllocation> run_per_step(const GaussMarkovSystem& sys, const std::function<Mat(int)>& C_of,
                                                const Vec& alpha, int steps, double beta, CCPOptions opt = {},
                                                bool warm = true) {
    PerStepAllocator alloc(beta, std::move(opt));
    std::vector<StepAllocation> out;
    Mat P = sys.P_init();
    for (int t = 0; t < steps; ++t) {
        if (!warm) alloc.reset();
        const Mat C = C_of(t);
        auto s = alloc.allocate(P, C, alpha);
        auto act = select_active(C, s.allocation.V.row(0).transpose());
        const Mat Pf = measurement_update(P, act.C, act.V).P_filt;
        P = time_update(Pf, sys);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace ratealloc
