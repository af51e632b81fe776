#pragma once

#include <cmath>
#include <sstream>
#include <vector>

#include "ratealloc/errors.hpp"
#include "ratealloc/linalg.hpp"
#include "ratealloc/model.hpp"

namespace ratealloc {

struct RiccatiState {
    Mat P_pred;  // P_{t|t-1}
    Mat P_filt;  // P_{t|t}
    int t = 1;
};

struct FilterState {
    Vec x_filt;
    Vec x_pred;
    RiccatiState riccati;
};

struct MeasurementUpdate {
    Mat P_filt;
    Mat gain;  // n x k
};

/// Joseph-form update. Zero-rate sensors must already be removed from
/// C_active / V_active; k = 0 returns the prior unchanged.
inline MeasurementUpdate measurement_update(const Mat& P_pred, const Mat& C_active,
                                            const Vec& V_active) {
    const auto n = P_pred.rows();
    const auto k = C_active.rows();
    if (C_active.cols() != n && k > 0) throw InvalidArgument("C_active has wrong column count");
    if (V_active.size() != k) throw InvalidArgument("V_active length must match C_active rows");
    if (k == 0) return {P_pred, Mat(n, 0)};
    for (Eigen::Index i = 0; i < k; ++i)
        if (!(V_active(i) > 0.0) || !std::isfinite(V_active(i)))
            throw InvalidArgument("active sensor noise variances must be positive and finite");

    const Mat PCt = P_pred * C_active.transpose();
    Mat S = C_active * PCt;
    S.diagonal() += V_active;
    S = symmetrize(S);
    Eigen::LLT<Mat> llt(S);
    if (llt.info() != Eigen::Success) {
        std::ostringstream os;
        os << "innovation covariance is singular (condition estimate " << condition_estimate(S)
           << ")";
        throw NumericalFailure(os.str());
    }
    Mat L = llt.solve(PCt.transpose()).transpose();
    Mat IKC = Mat::Identity(n, n) - L * C_active;
    Mat P = IKC * P_pred * IKC.transpose() + L * V_active.asDiagonal() * L.transpose();
    return {symmetrize(P), std::move(L)};
}

inline Mat time_update(const Mat& P_filt, const GaussMarkovSystem& sys) {
    return symmetrize(sys.A() * P_filt * sys.A().transpose() + sys.FFt());
}

/// Splits a full allocation row (V_i = inf for zero-rate sensors) into the
/// active measurement rows and noise variances.
struct ActiveSet {
    std::vector<int> index;
    Mat C;
    Vec V;
};

inline ActiveSet select_active(const Mat& C_full, const Vec& V_row) {
    ActiveSet a;
    for (int i = 0; i < V_row.size(); ++i)
        if (std::isfinite(V_row(i))) a.index.push_back(i);
    const auto k = static_cast<Eigen::Index>(a.index.size());
    a.C.resize(k, C_full.cols());
    a.V.resize(k);
    for (Eigen::Index r = 0; r < k; ++r) {
        a.C.row(r) = C_full.row(a.index[r]);
        a.V(r) = V_row(a.index[r]);
    }
    return a;
}

inline FilterState initial_filter_state(const GaussMarkovSystem& sys) {
    FilterState s;
    s.x_pred = Vec::Zero(sys.n());
    s.x_filt = s.x_pred;
    s.riccati.P_pred = sys.P_init();
    s.riccati.P_filt = sys.P_init();
    s.riccati.t = 1;
    return s;
}

/// One fusion-center step: measurement update with the reconstructions of the
/// active sensors, then a one-step prediction.
inline FilterState lmmse_step(const FilterState& state, const GaussMarkovSystem& sys,
                              const Mat& C_active, const Vec& V_active, const Vec& eta_active) {
    if (eta_active.size() != C_active.rows())
        throw InvalidArgument("one reconstruction per active sensor required");
    const auto upd = measurement_update(state.riccati.P_pred, C_active, V_active);
    FilterState next;
    next.x_filt = state.x_pred;
    if (C_active.rows() > 0) next.x_filt += upd.gain * (eta_active - C_active * state.x_pred);
    next.x_pred = sys.A() * next.x_filt;
    next.riccati.P_filt = upd.P_filt;
    next.riccati.P_pred = time_update(upd.P_filt, sys);
    next.riccati.t = state.riccati.t + 1;
    return next;
}

/// Full-row variant: V_row(i) = inf marks a zero-rate sensor, whose eta is ignored.
inline FilterState lmmse_step_row(const FilterState& state, const GaussMarkovSystem& sys,
                                  const Mat& C_full, const Vec& V_row, const Vec& eta_full) {
    auto act = select_active(C_full, V_row);
    Vec eta(static_cast<Eigen::Index>(act.index.size()));
    for (std::size_t r = 0; r < act.index.size(); ++r) eta(r) = eta_full(act.index[r]);
    return lmmse_step(state, sys, act.C, act.V, eta);
}

enum class RiccatiMethod { fixed_point, doubling };

struct SteadyState {
    Mat P_pred;
    Mat P_filt;
    int iterations = 0;
};

namespace detail {

// Structure-preserving doubling for Sigma = A Sigma (I + R Sigma)^{-1} A^T + H.
inline SteadyState riccati_doubling(const Mat& A, const Mat& H, const Mat& R, double tol,
                                    int max_iter) {
    const auto n = A.rows();
    const Mat I = Mat::Identity(n, n);
    Mat Ak = A.transpose();
    Mat Gk = R;
    Mat Hk = H;
    for (int k = 1; k <= max_iter; ++k) {
        Eigen::PartialPivLU<Mat> W(I + Gk * Hk);
        const Mat WA = W.solve(Ak);
        const Mat WG = W.solve(Gk);
        Mat Hn = symmetrize(Hk + Ak.transpose() * Hk * WA);
        Mat Gn = symmetrize(Gk + Ak * WG * Ak.transpose());
        Mat An = Ak * WA;
        if (!Hn.allFinite())
            throw ConvergenceFailure("Riccati doubling diverged (pair not detectable?)");
        const double change = (Hn - Hk).cwiseAbs().maxCoeff();
        Ak = std::move(An);
        Gk = std::move(Gn);
        Hk = std::move(Hn);
        if (change <= tol * std::max(1e-300, Hk.cwiseAbs().maxCoeff())) {
            SteadyState ss;
            ss.P_pred = Hk;
            ss.iterations = k;
            return ss;
        }
    }
    throw ConvergenceFailure("Riccati doubling did not converge");
}

}  // namespace detail

/// Information matrix sum_i C_i^T V_i^{-1} C_i over the given active rows.
inline Mat information_matrix(const Mat& C_active, const Vec& V_active) {
    return symmetrize(C_active.transpose() * V_active.cwiseInverse().asDiagonal() * C_active);
}

/// Stationary Riccati solution with fixed noise. Fixed-point iteration of
/// measurement_update o time_update to relative tolerance `tol` by default.
inline SteadyState steady_state_riccati(const GaussMarkovSystem& sys, const Mat& C_active,
                                        const Vec& V_active,
                                        RiccatiMethod method = RiccatiMethod::fixed_point,
                                        double tol = 1e-12, int max_iter = 200000) {
    SteadyState ss;
    if (method == RiccatiMethod::doubling) {
        ss = detail::riccati_doubling(sys.A(), sys.FFt(), information_matrix(C_active, V_active),
                                      tol * 1e-2, 200);
        ss.P_filt = measurement_update(ss.P_pred, C_active, V_active).P_filt;
        return ss;
    }
    Mat P = sys.FFt();
    for (int k = 1; k <= max_iter; ++k) {
        Mat Pf = measurement_update(P, C_active, V_active).P_filt;
        Mat Pn = time_update(Pf, sys);
        if (!Pn.allFinite() || Pn.cwiseAbs().maxCoeff() > 1e200)
            throw ConvergenceFailure("Riccati iteration diverged");
        const double change = (Pn - P).cwiseAbs().maxCoeff();
        P = std::move(Pn);
        if (change <= tol * std::max(1e-300, P.cwiseAbs().maxCoeff())) {
            ss.P_pred = P;
            ss.P_filt = measurement_update(P, C_active, V_active).P_filt;
            ss.iterations = k;
            return ss;
        }
    }
    throw ConvergenceFailure("Riccati fixed-point iteration did not converge");
}

/// Positive root of P^{-1} = (a^2 P + f^2)^{-1} + V^{-1}; V = inf gives f^2/(1-a^2).
inline double scalar_are_root(double a, double f, double V) {
    const double a2 = a * a, f2 = f * f;
    if (std::isinf(V)) {
        if (a2 >= 1.0) return kInf;
        return f2 / (1.0 - a2);
    }
    if (a2 == 0.0) return V * f2 / (f2 + V);
    const double b = f2 + V * (1.0 - a2);
    // Stable form of (-b + sqrt(b^2 + 4 a^2 V f^2)) / (2 a^2).
    return 2.0 * V * f2 / (b + std::sqrt(b * b + 4.0 * a2 * V * f2));
}

}  // namespace ratealloc
