#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "ratealloc/errors.hpp"

namespace ratealloc {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

inline double min_eigenvalue(const Mat& sym) {
    if (sym.size() == 0) return kInf;
    Eigen::SelfAdjointEigenSolver<Mat> es(sym, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
}

// Spectral norm proxy used to scale PSD tolerances.
inline double scale_of(const Mat& m) { return std::max(1.0, m.cwiseAbs().maxCoeff()); }

/// min eigenvalue >= -rel_tol * max(1, max|entry|).
inline bool is_psd(const Mat& sym, double rel_tol = 1e-9) {
    if (sym.size() == 0) return true;
    if (!sym.allFinite()) return false;
    return min_eigenvalue(symmetrize(sym)) >= -rel_tol * scale_of(sym);
}

inline double condition_estimate(const Mat& sym) {
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(sym), Eigen::EigenvaluesOnly);
    const auto& ev = es.eigenvalues();
    const double lo = std::abs(ev(0)), hi = std::abs(ev(ev.size() - 1));
    return lo == 0.0 ? kInf : hi / lo;
}

/// Inverse of a symmetric positive definite matrix through Cholesky.
inline Mat spd_inverse(const Mat& m, const char* what = "matrix") {
    Eigen::LLT<Mat> llt(symmetrize(m));
    if (llt.info() != Eigen::Success) {
        std::ostringstream os;
        os << what << " is not positive definite (condition estimate "
           << condition_estimate(m) << ")";
        throw NumericalFailure(os.str());
    }
    return symmetrize(llt.solve(Mat::Identity(m.rows(), m.cols())));
}

/// Symmetric PSD square root; negative eigenvalues from round-off are clipped.
inline Mat psd_sqrt(const Mat& m) {
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m));
    Vec d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

// Packed upper-triangular indexing for symmetric matrix variables.
inline int packed_size(int n) { return n * (n + 1) / 2; }

inline int packed_index(int n, int a, int b) {
    if (a > b) std::swap(a, b);
    return a * n - a * (a - 1) / 2 + (b - a);
}

/// Solves X - Phi X Phi^T = R by Smith doubling. Requires rho(Phi) < 1.
inline Mat stein_solve(const Mat& phi, const Mat& r, double tol = 1e-14, int max_iter = 64) {
    Mat x = r;
    Mat p = phi;
    for (int k = 0; k < max_iter; ++k) {
        Mat inc = p * x * p.transpose();
        x += inc;
        if (!x.allFinite()) break;
        if (inc.cwiseAbs().maxCoeff() <= tol * std::max(1e-300, x.cwiseAbs().maxCoeff()))
            return symmetrize(x);
        p = p * p;
    }
    throw ConvergenceFailure("Stein equation did not converge (closed loop not stable?)");
}

}  // namespace ratealloc
