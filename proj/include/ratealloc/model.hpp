#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/SVD>

#include "ratealloc/errors.hpp"
#include "ratealloc/linalg.hpp"
#include "ratealloc/rng.hpp"

namespace ratealloc {

/// Gauss-Markov source x_{t+1} = A x_t + F w_t, w_t ~ N(0, I), x_1 ~ N(0, P_init).
class GaussMarkovSystem {
public:
    GaussMarkovSystem(Mat A, Mat F, Mat P_init)
        : A_(std::move(A)), F_(std::move(F)), P_init_(std::move(P_init)) {
        const auto n = A_.rows();
        if (n < 1 || A_.cols() != n) throw InvalidArgument("A must be square and non-empty");
        if (F_.rows() != n || F_.cols() < 1) throw InvalidArgument("F must have n rows");
        if (P_init_.rows() != n || P_init_.cols() != n)
            throw InvalidArgument("P_init must be n x n");
        if (!A_.allFinite() || !F_.allFinite() || !P_init_.allFinite())
            throw InvalidArgument("system matrices must be finite");
        if ((P_init_ - P_init_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale_of(P_init_))
            throw InvalidArgument("P_init must be symmetric");
        if (!is_psd(P_init_)) throw InvalidArgument("P_init must be positive semidefinite");
        P_init_ = symmetrize(P_init_);
        FFt_ = symmetrize(F_ * F_.transpose());
    }

    const Mat& A() const noexcept { return A_; }
    const Mat& F() const noexcept { return F_; }
    const Mat& P_init() const noexcept { return P_init_; }
    const Mat& FFt() const noexcept { return FFt_; }
    int n() const noexcept { return static_cast<int>(A_.rows()); }
    int m() const noexcept { return static_cast<int>(F_.cols()); }

    GaussMarkovSystem with_prior(Mat P) const { return {A_, F_, std::move(P)}; }

private:
    Mat A_, F_, P_init_, FFt_;
};

/// Scalar sensors y_i = C_i x with per-bit weights alpha_i.
class SensorBank {
public:
    SensorBank(Mat C, Vec alpha, std::vector<std::string> labels = {})
        : C_(std::move(C)), alpha_(std::move(alpha)), labels_(std::move(labels)) {
        if (C_.rows() < 1) throw InvalidArgument("sensor bank needs at least one sensor");
        if (alpha_.size() != C_.rows()) throw InvalidArgument("alpha length must equal rows of C");
        if (!C_.allFinite() || !alpha_.allFinite()) throw InvalidArgument("non-finite sensor data");
        for (int i = 0; i < C_.rows(); ++i) {
            if (!(alpha_(i) > 0.0)) throw InvalidArgument("bit weights must be positive");
            if (C_.row(i).cwiseAbs().maxCoeff() == 0.0)
                throw InvalidArgument("sensor " + std::to_string(i) + " has an all-zero row");
        }
        if (labels_.empty()) {
            for (int i = 0; i < C_.rows(); ++i) labels_.push_back("s" + std::to_string(i));
        } else if (static_cast<int>(labels_.size()) != C_.rows()) {
            throw InvalidArgument("labels length must equal number of sensors");
        }
    }

    static SensorBank uniform(Mat C) {
        Vec alpha = Vec::Ones(C.rows());
        return {std::move(C), std::move(alpha)};
    }

    const Mat& C() const noexcept { return C_; }
    const Vec& alpha() const noexcept { return alpha_; }
    const std::vector<std::string>& labels() const noexcept { return labels_; }
    int M() const noexcept { return static_cast<int>(C_.rows()); }
    int n() const noexcept { return static_cast<int>(C_.cols()); }

private:
    Mat C_;
    Vec alpha_;
    std::vector<std::string> labels_;
};

inline void check_dimensions(const GaussMarkovSystem& sys, const SensorBank& bank) {
    if (bank.n() != sys.n()) throw InvalidArgument("sensor rows must have n columns");
}

struct Trajectory {
    Mat states;        // T x n, row t is x_{t+1}
    Mat measurements;  // T x M, row t is C x_{t+1}
    std::uint64_t seed = 0;
    int horizon() const { return static_cast<int>(states.rows()); }
};

enum class HeatModelVariant {
    as_printed,                // A = (a/h^2) tridiag(-1, 2, -1)
    identity_minus_laplacian,  // A = I - (a dt/h^2) tridiag(-1, 2, -1)
};

// The as-printed model has near-zero dynamics for the published constants
// (entries ~1e-5); the alternative is the usual explicit Euler step.
inline GaussMarkovSystem build_heat_system(int nodes, double diffusivity, double segment_length,
                                           HeatModelVariant variant = HeatModelVariant::as_printed,
                                           double dt = 1.0) {
    if (nodes < 2) throw InvalidArgument("heat system needs at least two nodes");
    if (!(diffusivity > 0.0) || !(segment_length > 0.0) || !(dt > 0.0))
        throw InvalidArgument("diffusivity, segment length and dt must be positive");
    Mat lap = Mat::Zero(nodes, nodes);
    for (int i = 0; i < nodes; ++i) {
        lap(i, i) = 2.0;
        if (i > 0) lap(i, i - 1) = -1.0;
        if (i + 1 < nodes) lap(i, i + 1) = -1.0;
    }
    const double k = diffusivity / (segment_length * segment_length);
    Mat A = variant == HeatModelVariant::as_printed
                ? Mat(k * lap)
                : Mat(Mat::Identity(nodes, nodes) - (k * dt) * lap);
    return {std::move(A), Mat::Identity(nodes, nodes), Mat::Identity(nodes, nodes)};
}

/// Rank test on [C; CA; ...; CA^{n-1}] with sigma_min/sigma_max > rel_tol.
inline bool check_observability(const GaussMarkovSystem& sys, const SensorBank& bank,
                                double rel_tol = 1e-9) {
    check_dimensions(sys, bank);
    const int n = sys.n(), M = bank.M();
    Mat O(static_cast<Eigen::Index>(n) * M, n);
    Mat block = bank.C();
    for (int k = 0; k < n; ++k) {
        // Rescale each power so tiny/huge A do not drown the rank test.
        const double s = block.cwiseAbs().maxCoeff();
        O.middleRows(static_cast<Eigen::Index>(k) * M, M) = s > 0 ? Mat(block / s) : block;
        block = block * sys.A();
    }
    Eigen::JacobiSVD<Mat> svd(O);
    const Vec& sv = svd.singularValues();
    if (sv(0) == 0.0) return false;
    return sv(n - 1) / sv(0) > rel_tol;
}

inline Trajectory simulate_source(const GaussMarkovSystem& sys, const SensorBank& bank, int horizon,
                                  std::uint64_t seed) {
    check_dimensions(sys, bank);
    if (horizon < 1) throw InvalidArgument("horizon must be >= 1");
    const int n = sys.n(), m = sys.m();
    CounterRng rng = CounterRng(seed).split(0x5eed);
    Trajectory tr;
    tr.seed = seed;
    tr.states.resize(horizon, n);
    const Mat root = psd_sqrt(sys.P_init());
    Vec z(n), w(m);
    for (int j = 0; j < n; ++j) z(j) = rng.normal();
    Vec x = root * z;
    for (int t = 0; t < horizon; ++t) {
        tr.states.row(t) = x.transpose();
        for (int j = 0; j < m; ++j) w(j) = rng.normal();
        x = sys.A() * x + sys.F() * w;
    }
    tr.measurements = tr.states * bank.C().transpose();
    return tr;
}

}  // namespace ratealloc
