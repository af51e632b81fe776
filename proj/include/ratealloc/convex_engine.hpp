#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <sstream>
#include <optional>
#include <string>
#include <vector>

#include "ratealloc/dc_program.hpp"
#include "ratealloc/errors.hpp"
#include "ratealloc/kalman.hpp"
#include "ratealloc/linalg.hpp"

namespace ratealloc {

enum class SolverStatus { optimal, infeasible, max_iter, numerical_failure };

inline const char* to_string(SolverStatus s) {
    switch (s) {
        case SolverStatus::optimal: return "optimal";
        case SolverStatus::infeasible: return "infeasible";
        case SolverStatus::max_iter: return "max_iter";
        case SolverStatus::numerical_failure: return "numerical_failure";
    }
    return "?";
}

/// lmi: barrier over the full block program. reduced: barrier over delta
/// only, with covariances eliminated through the Riccati recursion.
enum class Route { automatic, lmi, reduced };

struct SolverOptions {
    double feas_tol = 1e-9;
    double opt_tol = 1e-7;   // barrier gap relative to max(1, |f|)
    double abs_tol = 0.0;    // if > 0, the gap must also fall below this (nats)
    int max_newton = 200;    // per barrier stage
    double mu = 10.0;
    double t0 = 1.0;
    double newton_tol = 1e-9;  // lambda^2 / 2
    Route route = Route::automatic;
    int lmi_max_vars = 64;
    double hessian_refresh = 0.2;  // reduced route: rebuild the difference Hessian after this relative move

    bool gap_closed(double gap, double f) const {
        return gap <= opt_tol * std::max(1.0, std::abs(f)) && (abs_tol <= 0.0 || gap <= abs_tol);
    }
};

struct SolverReport {
    SolverStatus status = SolverStatus::numerical_failure;
    double objective = kInf;  // nats
    Vec x;
    Mat delta;  // filled by the program-level entry points
    double violation = 0.0;
    double min_margin = 0.0;
    double gap = kInf;
    int iterations = 0;
    int stages = 0;
    double wall_time = 0.0;
    Route route = Route::lmi;
    std::string message;

    double objective_bits() const { return objective / kLn2; }
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct BlockPlan {
    int size = 0;
    Mat F0;
    std::vector<int> vars;
    std::vector<std::vector<Triplet>> terms;  // per entry of vars
};

// Barrier for: minimize t * (c^T x + c0 - sum w log x_v) - sum_b log det F_b(x).
class LmiBarrier {
public:
    LmiBarrier(const ConvexSubproblem& sub) : sub_(sub) {
        for (const auto& b : sub.blocks) {
            BlockPlan p;
            p.size = b.size;
            p.F0 = Mat::Zero(b.size, b.size);
            std::vector<int> slot(sub.nvar, -1);
            for (const auto& tr : b.terms) {
                if (tr.var < 0) {
                    p.F0(tr.row, tr.col) += tr.value;
                    if (tr.row != tr.col) p.F0(tr.col, tr.row) += tr.value;
                    continue;
                }
                if (slot[tr.var] < 0) {
                    slot[tr.var] = static_cast<int>(p.vars.size());
                    p.vars.push_back(tr.var);
                    p.terms.emplace_back();
                }
                p.terms[slot[tr.var]].push_back(tr);
            }
            plans_.push_back(std::move(p));
        }
    }

    Mat block_value(const BlockPlan& p, const Vec& x) const {
        Mat F = p.F0;
        for (std::size_t k = 0; k < p.vars.size(); ++k) {
            const double xv = x(p.vars[k]);
            for (const auto& tr : p.terms[k]) {
                F(tr.row, tr.col) += tr.value * xv;
                if (tr.row != tr.col) F(tr.col, tr.row) += tr.value * xv;
            }
        }
        return F;
    }

    // psi = t f + phi; false if x is outside the open domain.
    bool value(const Vec& x, double t, double& psi, double& f) const {
        f = sub_.c.dot(x) + sub_.c0;
        for (const auto& l : sub_.logs) {
            if (!(x(l.var) > 0.0)) return false;
            f -= l.weight * std::log(x(l.var));
        }
        double phi = 0.0;
        for (const auto& p : plans_) {
            Eigen::LLT<Mat> llt(block_value(p, x));
            if (llt.info() != Eigen::Success) return false;
            const Vec d = llt.matrixL().toDenseMatrix().diagonal();
            if ((d.array() <= 0.0).any()) return false;
            phi -= 2.0 * d.array().log().sum();
        }
        psi = t * f + phi;
        return std::isfinite(psi);
    }

    void grad_hess(const Vec& x, double t, Vec& g, Mat& H) const {
        const int nv = sub_.nvar;
        g = t * sub_.c;
        H = Mat::Zero(nv, nv);
        for (const auto& l : sub_.logs) {
            g(l.var) -= t * l.weight / x(l.var);
            H(l.var, l.var) += t * l.weight / (x(l.var) * x(l.var));
        }
        for (const auto& p : plans_) {
            Eigen::LLT<Mat> llt(block_value(p, x));
            const Mat W = llt.solve(Mat::Identity(p.size, p.size));
            const std::size_t K = p.vars.size();
            std::vector<Mat> WFW(K);
            for (std::size_t k = 0; k < K; ++k) {
                Mat Mk = Mat::Zero(p.size, p.size);
                double gk = 0.0;
                for (const auto& tr : p.terms[k]) {
                    Mk.noalias() += tr.value * W.col(tr.row) * W.row(tr.col);
                    gk += tr.value * W(tr.col, tr.row);
                    if (tr.row != tr.col) {
                        Mk.noalias() += tr.value * W.col(tr.col) * W.row(tr.row);
                        gk += tr.value * W(tr.row, tr.col);
                    }
                }
                g(p.vars[k]) -= gk;
                WFW[k] = std::move(Mk);
            }
            for (std::size_t k = 0; k < K; ++k)
                for (std::size_t l = k; l < K; ++l) {
                    double h = 0.0;
                    for (const auto& tr : p.terms[l]) {
                        h += tr.value * WFW[k](tr.col, tr.row);
                        if (tr.row != tr.col) h += tr.value * WFW[k](tr.row, tr.col);
                    }
                    H(p.vars[k], p.vars[l]) += h;
                    if (l != k) H(p.vars[l], p.vars[k]) += h;
                }
        }
    }

private:
    const ConvexSubproblem& sub_;
    std::vector<BlockPlan> plans_;
};

inline Vec newton_direction(const Mat& H, const Vec& g) {
    Eigen::LLT<Mat> llt(H);
    if (llt.info() == Eigen::Success) return -llt.solve(g);
    const double scale = std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
    for (double reg = 1e-12; reg < 1e6; reg *= 100) {
        Mat Hr = H;
        Hr.diagonal().array() += reg * scale;
        Eigen::LLT<Mat> l2(Hr);
        if (l2.info() == Eigen::Success) return -l2.solve(g);
    }
    throw NumericalFailure("barrier Hessian is not positive definite");
}

// Path-following barrier method. `stop` is polled after every Newton step.
inline SolverReport barrier_method(const ConvexSubproblem& sub, Vec x, const SolverOptions& opt,
                                   const std::function<bool(const Vec&)>& stop = {}) {
    const auto start = Clock::now();
    SolverReport rep;
    rep.route = Route::lmi;
    LmiBarrier bar(sub);
    const double m = sub.barrier_degree();
    double t = opt.t0, psi = 0, f = 0;
    if (!bar.value(x, t, psi, f)) throw InvalidArgument("barrier start point is not strictly feasible");
    Vec g;
    Mat H;
    for (;;) {
        ++rep.stages;
        int steps = 0;
        for (;; ++steps) {
            if (steps >= opt.max_newton) {
                rep.status = SolverStatus::max_iter;
                rep.message = "Newton step limit reached in barrier stage";
                goto finish;
            }
            bar.grad_hess(x, t, g, H);
            Vec dx;
            try {
                dx = newton_direction(H, g);
            } catch (const NumericalFailure& e) {
                rep.status = SolverStatus::numerical_failure;
                rep.message = e.what();
                goto finish;
            }
            const double lam2 = -g.dot(dx);
            // lam2 / 2 estimates psi - psi*; below rounding of psi there is nothing left to gain.
            if (lam2 / 2.0 <= std::max(opt.newton_tol, 1e-13 * std::abs(psi))) break;
            double s = 1.0, psi_new = 0, f_new = 0;
            while (s > 1e-20) {
                Vec xn = x + s * dx;
                if (bar.value(xn, t, psi_new, f_new) && psi_new <= psi - 0.25 * s * lam2) break;
                s *= 0.5;
            }
            ++rep.iterations;
            if (s <= 1e-20) {
                // No decrease possible at working precision: treat the stage as centered.
                break;
            }
            x += s * dx;
            psi = psi_new;
            f = f_new;
            // At large t the gradient is a difference of O(t) terms; a
            // collapsing line search on a small decrement means we are at the
            // noise floor of the centering problem.
            if (s < 1e-3 && lam2 < 1e-4) break;
            if (stop && stop(x)) {
                rep.status = SolverStatus::optimal;
                rep.message = "early stop";
                goto finish;
            }
        }
        rep.gap = m / t;
        if (opt.gap_closed(m / t, f)) {
            rep.status = SolverStatus::optimal;
            break;
        }
        t *= opt.mu;
        bar.value(x, t, psi, f);
    }
finish:
    rep.x = x;
    rep.objective = sub.objective(x);
    rep.min_margin = sub.min_margin(x);
    rep.violation = std::max(0.0, -rep.min_margin);
    rep.wall_time = seconds_since(start);
    return rep;
}

}  // namespace detail

inline bool strictly_feasible(const ConvexSubproblem& sub, const Vec& x) {
    for (const auto& l : sub.logs)
        if (!(x(l.var) > 0.0)) return false;
    for (const auto& b : sub.blocks) {
        Eigen::LLT<Mat> llt(b.evaluate(x));
        if (llt.info() != Eigen::Success) return false;
    }
    return true;
}

/// Auxiliary-variable Phase I: minimize s subject to F_b(x) + s I >= 0,
/// x_v + s >= 0 for the log variables, and a box |x_k| <= R. Stops as soon
/// as s < 0.
inline Vec phase1_generic(const ConvexSubproblem& sub, const Vec& x0, const SolverOptions& opt = {}) {
    ConvexSubproblem aux;
    const int s_var = sub.nvar;
    aux.nvar = sub.nvar + 1;
    aux.c = Vec::Zero(aux.nvar);
    aux.c(s_var) = 1.0;
    for (auto b : sub.blocks) {
        for (int a = 0; a < b.size; ++a) b.add(s_var, a, a, 1.0);
        aux.blocks.push_back(std::move(b));
    }
    for (const auto& l : sub.logs) {
        AffineBlock b;
        b.kind = "positivity";
        b.size = 1;
        b.add(l.var, 0, 0, 1.0);
        b.add(s_var, 0, 0, 1.0);
        aux.blocks.push_back(std::move(b));
    }
    const double R = 1e6 * std::max(1.0, x0.cwiseAbs().maxCoeff());
    for (int k = 0; k < sub.nvar; ++k)
        for (double sign : {1.0, -1.0}) {
            AffineBlock b;
            b.kind = "box";
            b.size = 1;
            b.add(-1, 0, 0, R);
            b.add(k, 0, 0, -sign);
            aux.blocks.push_back(std::move(b));
        }
    {
        AffineBlock b;  // keeps s bounded below
        b.kind = "floor";
        b.size = 1;
        b.add(-1, 0, 0, 1.0);
        b.add(s_var, 0, 0, 1.0);
        aux.blocks.push_back(std::move(b));
    }
    double worst = 0.0;
    for (const auto& b : sub.blocks) worst = std::min(worst, min_eigenvalue(b.evaluate(x0)));
    for (const auto& l : sub.logs) worst = std::min(worst, x0(l.var));
    Vec z(aux.nvar);
    z.head(sub.nvar) = x0;
    z(s_var) = 1.0 - worst;
    auto stop = [&](const Vec& v) { return v(s_var) < 0.0 && strictly_feasible(sub, v.head(sub.nvar)); };
    SolverOptions o = opt;
    o.opt_tol = 1e-9;
    auto rep = detail::barrier_method(aux, z, o, stop);
    if (rep.x(s_var) < 0.0 && strictly_feasible(sub, rep.x.head(sub.nvar))) return rep.x.head(sub.nvar);
    throw InfeasibleBudget("no strictly feasible point (Phase I optimum s = " +
                               std::to_string(rep.x(s_var)) + ")",
                           std::nan(""));
}

/// Solves a subproblem with the dense LMI barrier method.
inline SolverReport solve(const ConvexSubproblem& sub, const std::optional<Vec>& warm_start = std::nullopt,
                          const SolverOptions& opt = {}) {
    Vec x0 = warm_start ? *warm_start : Vec::Zero(sub.nvar);
    if (x0.size() != sub.nvar) throw InvalidArgument("warm start has wrong length");
    if (!strictly_feasible(sub, x0)) {
        try {
            x0 = phase1_generic(sub, x0, opt);
        } catch (const InfeasibleBudget& e) {
            SolverReport rep;
            rep.status = SolverStatus::infeasible;
            rep.message = e.what();
            return rep;
        }
    }
    auto rep = detail::barrier_method(sub, x0, opt);
    if (rep.status == SolverStatus::optimal && rep.min_margin < -opt.feas_tol)
        rep.status = SolverStatus::numerical_failure;
    return rep;
}

// ---------------------------------------------------------------------------
// Analytic Phase I for the SRA programs.

namespace detail {

// Riccati chain with the prediction map inflated by 1/(1 - eps), so every
// coupling block of the relaxation is strictly positive definite.
inline ProgramPoint inflated_point(const DCProgram& prog, const Mat& delta, double eps, double& mse) {
    const auto& ix = prog.index();
    const Mat& C = prog.bank().C();
    const double inflate = 1.0 / (1.0 - eps);
    GaussMarkovSystem grown(prog.sys().A() * std::sqrt(inflate), prog.sys().F() * std::sqrt(inflate),
                            prog.is_infinite() ? prog.sys().P_init() : prog.sys().P_init());
    ProgramPoint p;
    p.delta = Mat::Zero(ix.T, ix.M);
    p.gamma = Mat::Zero(ix.T, ix.M);
    std::vector<Mat> P_filt;
    mse = 0.0;
    auto active = [&](int t) {
        Vec V(ix.M);
        for (int i = 0; i < ix.M; ++i) V(i) = ix.delta(t, i) >= 0 ? 1.0 / delta(t, i) : kInf;
        return select_active(C, V);
    };
    if (prog.is_infinite()) {
        auto act = active(0);
        auto ss = steady_state_riccati(grown, act.C, act.V, RiccatiMethod::doubling);
        p.Q_pred.push_back(spd_inverse(ss.P_pred, "inflated P_pred"));
        P_filt.push_back(ss.P_filt);
    } else {
        Mat Pp = prog.sys().P_init();
        for (int t = 0; t < ix.T; ++t) {
            auto act = active(t);
            p.Q_pred.push_back(t == 0 ? prog.prior_info() : spd_inverse(Pp, "inflated P_pred"));
            P_filt.push_back(measurement_update(Pp, act.C, act.V).P_filt);
            Pp = time_update(P_filt.back(), grown);
        }
    }
    for (int t = 0; t < ix.T; ++t) {
        mse += P_filt[t].trace() / ix.T;
        const Mat Pp = spd_inverse(p.Q_pred[t], "Q_pred");
        for (int i = 0; i < ix.M; ++i) {
            if (ix.delta(t, i) < 0) continue;
            const double d = delta(t, i);
            const double c = C.row(i) * Pp * C.row(i).transpose();
            p.delta(t, i) = d;
            p.gamma(t, i) = 0.5 * d / (1.0 + d * c);
        }
    }
    p.S = P_filt;
    return p;
}

}  // namespace detail

/// Open-loop MSE of the program (no sensors); inf if the source is unstable.
inline double zero_rate_mse(const DCProgram& prog) {
    try {
        return covariance_chain(prog, Mat::Zero(prog.horizon(), prog.bank().M())).mse;
    } catch (const ConvergenceFailure&) {
        return kInf;
    }
}

/// Smallest MSE reachable by the active sensors (limit of uniform delta -> inf).
inline double min_achievable_mse(const DCProgram& prog) {
    Mat d = Mat::Zero(prog.horizon(), prog.bank().M());
    for (int t = 0; t < d.rows(); ++t)
        for (int i = 0; i < d.cols(); ++i)
            if (prog.mask()(t, i)) d(t, i) = 1e12;
    try {
        return covariance_chain(prog, d).mse;
    } catch (const ConvergenceFailure&) {
        return kInf;
    }
}

struct FeasiblePoint {
    Vec x;        // strictly feasible point of the relaxation
    Mat delta;    // its allocation
    double mse;   // Gaussian-model MSE of the inflated chain
};

/// Uniform delta on a log grid; the first grid value whose inflated chain
/// leaves slack in the trace budget gives the point. MSE is decreasing in
/// delta, so an exhausted grid means the budget is below what the sensors
/// can reach.
inline FeasiblePoint phase1_feasible(const DCProgram& prog, double eps = 1e-3) {
    const auto& ix = prog.index();
    if (prog.active_count() == 0) throw InvalidArgument("program has no active sensors");
    for (double d0 = 1e-3; d0 <= 1e10 * 1.0001; d0 *= 10.0) {
        Mat delta = Mat::Zero(ix.T, ix.M);
        for (int t = 0; t < ix.T; ++t)
            for (int i = 0; i < ix.M; ++i)
                if (prog.mask()(t, i)) delta(t, i) = d0;
        double mse = 0.0;
        ProgramPoint p;
        try {
            p = detail::inflated_point(prog, delta, eps, mse);
        } catch (const Error&) {
            continue;
        }
        const double slack = prog.beta() - mse;
        if (!(slack > 0.0)) continue;
        for (auto& S : p.S) S.diagonal().array() += 0.5 * slack / ix.n;
        Vec x = pack(prog, p);
        return {std::move(x), std::move(delta), mse};
    }
    const double best = min_achievable_mse(prog);
    std::ostringstream msg;
    msg << std::setprecision(6) << "MSE budget " << prog.beta() << " is below the minimum achievable MSE " << best;
    throw InfeasibleBudget(msg.str(), best);
}

// ---------------------------------------------------------------------------
// Reduced route: the subproblem's partial minimum over (gamma, S, Q) for
// fixed delta is attained on the Riccati recursion, leaving
//   J(d) = sum_k w_k (d_k / dh_k - 1 + log dh_k + log(1/d_k + c_k(d)))
// subject to h(d) = (1/T) sum_t tr P_filt_t(d) <= beta.

class ReducedModel {
public:
    struct Eval {
        double J = kInf, h = kInf;
        Vec gJ, gh;
    };

    ReducedModel(const DCProgram& prog, const Mat& delta_hat) : prog_(prog) {
        const auto& ix = prog.index();
        for (int t = 0; t < ix.T; ++t)
            for (int i = 0; i < ix.M; ++i)
                if (ix.delta(t, i) >= 0) {
                    const double dh = delta_hat(t, i);
                    if (!(dh > 0.0) || !std::isfinite(dh))
                        throw InvalidArgument("expansion point must be strictly positive");
                    tt_.push_back(t);
                    ii_.push_back(i);
                    dhat_.push_back(dh);
                    w_.push_back(term_weight(prog, i));
                }
    }

    int size() const { return static_cast<int>(tt_.size()); }
    bool exact_hessian() const { return !prog_.is_infinite() && prog_.horizon() == 1; }

    Vec gather(const Mat& delta) const {
        Vec d(size());
        for (int k = 0; k < size(); ++k) d(k) = delta(tt_[k], ii_[k]);
        return d;
    }

    Mat scatter(const Vec& d) const {
        Mat delta = Mat::Zero(prog_.horizon(), prog_.bank().M());
        for (int k = 0; k < size(); ++k) delta(tt_[k], ii_[k]) = d(k);
        return delta;
    }

    /// Linearized objective in nats and the MSE; gradients on request.
    Eval eval(const Vec& d, bool grad) const {
        Eval e;
        for (int k = 0; k < size(); ++k)
            if (!(d(k) > 0.0) || !std::isfinite(d(k))) return e;
        const Mat& C = prog_.bank().C();
        const Mat& A = prog_.sys().A();
        const int T = prog_.horizon(), n = prog_.sys().n();
        const Mat I = Mat::Identity(n, n);
        std::vector<Mat> Pp(T), Pf(T), K(T);
        std::vector<std::vector<int>> rows(T);
        for (int k = 0; k < size(); ++k) rows[tt_[k]].push_back(k);
        auto active = [&](int t, Mat& Ca, Vec& Va) {
            Ca.resize(static_cast<Eigen::Index>(rows[t].size()), n);
            Va.resize(static_cast<Eigen::Index>(rows[t].size()));
            for (std::size_t r = 0; r < rows[t].size(); ++r) {
                Ca.row(r) = C.row(ii_[rows[t][r]]);
                Va(r) = 1.0 / d(rows[t][r]);
            }
        };
        try {
            if (prog_.is_infinite()) {
                Mat Ca;
                Vec Va;
                active(0, Ca, Va);
                auto ss = steady_state_riccati(prog_.sys(), Ca, Va, RiccatiMethod::doubling);
                Pp[0] = ss.P_pred;
                auto up = measurement_update(ss.P_pred, Ca, Va);
                Pf[0] = up.P_filt;
                K[0] = Ca.rows() ? Mat(I - up.gain * Ca) : I;
            } else {
                Mat P = prog_.sys().P_init();
                for (int t = 0; t < T; ++t) {
                    Mat Ca;
                    Vec Va;
                    active(t, Ca, Va);
                    Pp[t] = P;
                    auto up = measurement_update(P, Ca, Va);
                    Pf[t] = up.P_filt;
                    K[t] = Ca.rows() ? Mat(I - up.gain * Ca) : I;
                    P = time_update(Pf[t], prog_.sys());
                }
            }
        } catch (const Error&) {
            return e;
        }
        e.J = 0.0;
        e.h = 0.0;
        Vec cval(size());
        for (int k = 0; k < size(); ++k) {
            const auto Ci = C.row(ii_[k]);
            cval(k) = Ci * Pp[tt_[k]] * Ci.transpose();
            e.J += w_[k] * (d(k) / dhat_[k] - 1.0 + std::log(dhat_[k]) + std::log(1.0 / d(k) + cval(k)));
        }
        for (int t = 0; t < T; ++t) e.h += Pf[t].trace() / T;
        if (!grad) return e;

        e.gJ.resize(size());
        e.gh.resize(size());
        // Explicit parts and the sensitivity of J to each prediction.
        std::vector<Mat> GJ(T, Mat::Zero(n, n));
        for (int k = 0; k < size(); ++k) {
            const double u = 1.0 / d(k) + cval(k);
            e.gJ(k) = w_[k] * (1.0 / dhat_[k] - 1.0 / (d(k) * d(k) * u));
            e.gh(k) = 0.0;
            const auto Ci = C.row(ii_[k]);
            GJ[tt_[k]].noalias() += (w_[k] / u) * Ci.transpose() * Ci;
        }
        const Mat GPh = I / T;
        if (prog_.is_infinite()) {
            const Mat Phi = A * K[0];
            const Mat YJ = stein_solve(Phi.transpose(), GJ[0]);
            const Mat Yh = stein_solve(Phi.transpose(), K[0].transpose() * GPh * K[0]);
            const Mat RJ = Pf[0] * A.transpose() * YJ * A * Pf[0];
            const Mat Rh = Pf[0] * (A.transpose() * Yh * A + GPh) * Pf[0];
            for (int k = 0; k < size(); ++k) {
                const auto Ci = C.row(ii_[k]);
                e.gJ(k) -= Ci * RJ * Ci.transpose();
                e.gh(k) -= Ci * Rh * Ci.transpose();
            }
            return e;
        }
        Mat LamJ = Mat::Zero(n, n), Lamh = Mat::Zero(n, n);
        for (int t = T - 1; t >= 0; --t) {
            const Mat GamJ = A.transpose() * LamJ * A;
            const Mat Gamh = GPh + A.transpose() * Lamh * A;
            const Mat RJ = Pf[t] * GamJ * Pf[t];
            const Mat Rh = Pf[t] * Gamh * Pf[t];
            for (int k : rows[t]) {
                const auto Ci = C.row(ii_[k]);
                e.gJ(k) -= Ci * RJ * Ci.transpose();
                e.gh(k) -= Ci * Rh * Ci.transpose();
            }
            LamJ = symmetrize(GJ[t] + K[t].transpose() * GamJ * K[t]);
            Lamh = symmetrize(K[t].transpose() * Gamh * K[t]);
        }
        return e;
    }

    /// Exact Hessians for a single-step finite program (c_k is data there).
    void hessians(const Vec& d, Mat& HJ, Mat& Hh) const {
        const Mat& C = prog_.bank().C();
        const int K = size();
        Mat Ca(K, prog_.sys().n());
        for (int k = 0; k < K; ++k) Ca.row(k) = C.row(ii_[k]);
        const Mat& P0 = prog_.sys().P_init();
        auto up = measurement_update(P0, Ca, d.cwiseInverse());
        const Mat& P = up.P_filt;
        const Mat CPC = Ca * P * Ca.transpose();
        const Mat CP2C = Ca * P * P * Ca.transpose();
        Hh = 2.0 * CPC.cwiseProduct(CP2C);
        HJ = Mat::Zero(K, K);
        for (int k = 0; k < K; ++k) {
            const double c = Ca.row(k) * P0 * Ca.row(k).transpose();
            const double u = 1.0 / d(k) + c;
            const double d3 = d(k) * d(k) * d(k);
            HJ(k, k) = w_[k] * (2.0 / (d3 * u) - 1.0 / (d3 * d(k) * u * u));
        }
    }

private:
    const DCProgram& prog_;
    std::vector<int> tt_, ii_;
    std::vector<double> dhat_, w_;
};

inline constexpr double kSlackFloor = 1e-11;

/// Barrier method on min t J(d) - log(beta - h(d)); degree 1.
inline SolverReport solve_reduced(const DCProgram& prog, const Mat& delta_hat, const Mat& start,
                                  const SolverOptions& opt = {}) {
    const auto t_start = detail::Clock::now();
    ReducedModel model(prog, delta_hat);
    const double beta = prog.beta();
    SolverReport rep;
    rep.route = Route::reduced;
    Vec d = model.gather(start);
    auto e = model.eval(d, true);
    if (!(e.h < beta) || !std::isfinite(e.J))
        throw InvalidArgument("reduced start point is not strictly feasible");
    const int K = model.size();
    Mat HJ, Hh;
    Vec d_ref;
    auto refresh = [&] {
        if (model.exact_hessian()) {
            model.hessians(d, HJ, Hh);
            return;
        }
        if (d_ref.size() && ((d - d_ref).cwiseAbs().array() / d_ref.array()).maxCoeff() <= opt.hessian_refresh)
            return;
        HJ.resize(K, K);
        Hh.resize(K, K);
        for (int k = 0; k < K; ++k) {
            const double step = 1e-7 * d(k);
            Vec dp = d;
            dp(k) += step;
            auto ep = model.eval(dp, true);
            if (!std::isfinite(ep.J)) {
                dp(k) = d(k) - step;
                ep = model.eval(dp, true);
                HJ.col(k) = (e.gJ - ep.gJ) / step;
                Hh.col(k) = (e.gh - ep.gh) / step;
            } else {
                HJ.col(k) = (ep.gJ - e.gJ) / step;
                Hh.col(k) = (ep.gh - e.gh) / step;
            }
        }
        HJ = symmetrize(HJ);
        Hh = symmetrize(Hh);
        d_ref = d;
    };
    // Start where the objective and barrier gradients balance.
    double t = opt.t0;
    {
        const double gg = e.gJ.squaredNorm(), cross = -e.gJ.dot(e.gh) / (beta - e.h);
        if (gg > 0.0 && cross > 0.0) t = std::max(t, cross / gg);
    }
    auto psi_of = [&](const ReducedModel::Eval& v, double tt) { return tt * v.J - std::log(beta - v.h); };
    for (;;) {
        ++rep.stages;
        int steps = 0;
        for (;; ++steps) {
            if (steps >= opt.max_newton) {
                rep.status = SolverStatus::max_iter;
                rep.message = "Newton step limit reached in barrier stage";
                goto finish;
            }
            const double slack = beta - e.h;
            Vec g = t * e.gJ + e.gh / slack;
            refresh();
            Mat H = t * HJ + Hh / slack + e.gh * e.gh.transpose() / (slack * slack);
            Vec dx;
            try {
                dx = detail::newton_direction(H, g);
            } catch (const NumericalFailure& ex) {
                rep.status = SolverStatus::numerical_failure;
                rep.message = ex.what();
                goto finish;
            }
            double lam2 = -g.dot(dx);
            if (lam2 < 0) {  // inexact Hessian: fall back to scaled gradient
                dx = -g.cwiseQuotient(H.diagonal().cwiseAbs().cwiseMax(1e-300));
                lam2 = -g.dot(dx);
            }
            const double psi = psi_of(e, t);
            // Decrements below the rounding of psi cannot be resolved by the line search.
            if (lam2 / 2.0 <= std::max(opt.newton_tol, 1e-13 * std::abs(psi))) break;
            double s = 1.0;
            // Stay inside the positive orthant.
            for (int k = 0; k < K; ++k)
                if (dx(k) < 0) s = std::min(s, 0.99 * d(k) / -dx(k));
            ReducedModel::Eval en;
            bool moved = false;
            while (s > 1e-20) {
                Vec dn = d + s * dx;
                en = model.eval(dn, false);
                if (en.h < beta && std::isfinite(en.J) && psi_of(en, t) <= psi - 0.25 * s * lam2) {
                    d = dn;
                    moved = true;
                    break;
                }
                s *= 0.5;
            }
            ++rep.iterations;
            const bool fresh = model.exact_hessian() || (d_ref.size() && d_ref == d);
            if (!moved) {
                if (fresh) break;
                d_ref.resize(0);  // stale difference Hessian: rebuild and retry
                continue;
            }
            e = model.eval(d, true);
            if (s < 0.25 && !fresh) d_ref.resize(0);
            if (s < 1e-3 && lam2 < 1e-4) break;
            if (steps >= 10 && beta - e.h <= kSlackFloor * std::max(1.0, beta)) break;
        }
        rep.gap = 1.0 / t;
        if (opt.gap_closed(1.0 / t, e.J)) {
            rep.status = SolverStatus::optimal;
            break;
        }
        // The budget slack is at the rounding level of h: further stages only chase noise.
        if (beta - e.h <= kSlackFloor * std::max(1.0, beta)) {
            rep.status = SolverStatus::optimal;
            rep.message = "stopped at the rounding floor of the budget slack";
            break;
        }
        t *= opt.mu;
    }
finish:
    rep.delta = model.scatter(d);
    rep.objective = e.J;
    rep.min_margin = (beta - e.h) / std::max(1.0, beta);
    rep.violation = std::max(0.0, -rep.min_margin);
    rep.wall_time = detail::seconds_since(t_start);
    return rep;
}

inline Route choose_route(const DCProgram& prog, const SolverOptions& opt) {
    if (opt.route != Route::automatic) return opt.route;
    return prog.index().size <= opt.lmi_max_vars ? Route::lmi : Route::reduced;
}

/// Solves the CCP subproblem linearized at delta_hat. `warm` is a strictly
/// feasible decision vector (lmi) or allocation (reduced); when absent the
/// analytic Phase I supplies one.
inline SolverReport solve_subproblem(const DCProgram& prog, const Mat& delta_hat,
                                     const std::optional<Vec>& warm_x, const std::optional<Mat>& warm_delta,
                                     const SolverOptions& opt = {}) {
    const Route route = choose_route(prog, opt);
    if (route == Route::reduced) {
        if (!warm_delta) return solve_reduced(prog, delta_hat, phase1_feasible(prog).delta, opt);
        // A warm start on the budget boundary pins the barrier; h is convex in
        // delta, so a step toward the Phase I point restores slack.
        Mat start = *warm_delta;
        double mse = kInf;
        try {
            mse = covariance_chain(prog, start).mse;
        } catch (const Error&) {
        }
        if (!(prog.beta() - mse > 1e-6 * std::max(1.0, prog.beta())))
            start = 0.9 * start + 0.1 * phase1_feasible(prog).delta;
        return solve_reduced(prog, delta_hat, start, opt);
    }
    const auto sub = linearize_subproblem(prog, delta_hat);
    Vec x0 = warm_x && strictly_feasible(sub, *warm_x) ? *warm_x : phase1_feasible(prog).x;
    auto rep = detail::barrier_method(sub, x0, opt);
    rep.delta = unpack(prog, rep.x).delta;
    return rep;
}

}  // namespace ratealloc
