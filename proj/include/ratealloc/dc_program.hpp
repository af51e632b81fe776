#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ratealloc/errors.hpp"
#include "ratealloc/info_cost.hpp"
#include "ratealloc/kalman.hpp"
#include "ratealloc/linalg.hpp"
#include "ratealloc/model.hpp"

namespace ratealloc {

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Column layout of the decision vector. Index -1 marks an absent variable
/// (inactive sensor, or the fixed prior information at t = 1).
struct VariableIndex {
    int n = 0, M = 0, T = 1;
    bool infinite = false;
    Eigen::ArrayXXi delta, gamma;  // T x M
    std::vector<int> S;            // offset of packed S_t
    std::vector<int> Q;            // offset of packed Q_{t|t-1}, -1 if fixed
    int size = 0;

    int sym(int offset, int a, int b) const { return offset + packed_index(n, a, b); }
};

// Q_{1|0} = P_init^{-1} is data, not a variable: the first measurement is
// taken against the prior of the source.
class DCProgram {
public:
    static DCProgram finite(const GaussMarkovSystem& sys, const SensorBank& bank, int T, double beta,
                            Mask mask = {}) {
        if (T < 1) throw InvalidArgument("horizon must be >= 1");
        return DCProgram(sys, bank, T, false, beta, std::move(mask));
    }

    static DCProgram infinite(const GaussMarkovSystem& sys, const SensorBank& bank, double beta,
                              Mask mask = {}) {
        return DCProgram(sys, bank, 1, true, beta, std::move(mask));
    }

    DCProgram with_mask(Mask mask) const {
        return DCProgram(sys_, bank_, T_, infinite_, beta_, std::move(mask));
    }

    DCProgram with_beta(double beta) const { return DCProgram(sys_, bank_, T_, infinite_, beta, mask_); }

    const GaussMarkovSystem& sys() const noexcept { return sys_; }
    const SensorBank& bank() const noexcept { return bank_; }
    int horizon() const noexcept { return T_; }
    bool is_infinite() const noexcept { return infinite_; }
    double beta() const noexcept { return beta_; }
    const Mask& mask() const noexcept { return mask_; }
    const VariableIndex& index() const noexcept { return idx_; }
    const Mat& prior_info() const noexcept { return prior_info_; }
    int active_count() const { return static_cast<int>(mask_.count()); }

private:
    DCProgram(GaussMarkovSystem sys, SensorBank bank, int T, bool infinite, double beta, Mask mask)
        : sys_(std::move(sys)), bank_(std::move(bank)), T_(T), infinite_(infinite), beta_(beta),
          mask_(std::move(mask)) {
        check_dimensions(sys_, bank_);
        if (!(beta_ >= 0.0) || !std::isfinite(beta_)) throw InvalidArgument("beta must be finite and >= 0");
        const int M = bank_.M();
        if (mask_.size() == 0) mask_ = Mask::Constant(T_, M, true);
        if (mask_.rows() != T_ || mask_.cols() != M) throw InvalidArgument("mask must be T x M");
        if (!infinite_) {
            Eigen::LLT<Mat> llt(sys_.P_init());
            if (llt.info() != Eigen::Success || min_eigenvalue(sys_.P_init()) <= 0.0)
                throw InvalidArgument("finite-horizon program needs a positive definite P_init");
            prior_info_ = spd_inverse(sys_.P_init(), "P_init");
        }
        build_index();
    }

    void build_index() {
        const int n = sys_.n(), M = bank_.M(), np = packed_size(n);
        idx_.n = n;
        idx_.M = M;
        idx_.T = T_;
        idx_.infinite = infinite_;
        idx_.delta = Eigen::ArrayXXi::Constant(T_, M, -1);
        idx_.gamma = Eigen::ArrayXXi::Constant(T_, M, -1);
        int k = 0;
        for (int t = 0; t < T_; ++t)
            for (int i = 0; i < M; ++i)
                if (mask_(t, i)) {
                    idx_.delta(t, i) = k++;
                    idx_.gamma(t, i) = k++;
                }
        idx_.S.assign(T_, -1);
        idx_.Q.assign(T_, -1);
        for (int t = 0; t < T_; ++t) {
            idx_.S[t] = k;
            k += np;
        }
        for (int t = infinite_ ? 0 : 1; t < T_; ++t) {
            idx_.Q[t] = k;
            k += np;
        }
        idx_.size = k;
    }

    GaussMarkovSystem sys_;
    SensorBank bank_;
    int T_;
    bool infinite_;
    double beta_;
    Mask mask_;
    Mat prior_info_;
    VariableIndex idx_;
};

/// Structured view of a decision vector; delta/gamma are zero where inactive.
struct ProgramPoint {
    Mat delta, gamma;          // T x M
    std::vector<Mat> S;        // T
    std::vector<Mat> Q_pred;   // T, Q_pred[0] is the fixed prior for finite horizons
};

inline Vec pack(const DCProgram& prog, const ProgramPoint& p) {
    const auto& ix = prog.index();
    Vec x = Vec::Zero(ix.size);
    for (int t = 0; t < ix.T; ++t) {
        for (int i = 0; i < ix.M; ++i)
            if (ix.delta(t, i) >= 0) {
                x(ix.delta(t, i)) = p.delta(t, i);
                x(ix.gamma(t, i)) = p.gamma(t, i);
            }
        for (int a = 0; a < ix.n; ++a)
            for (int b = a; b < ix.n; ++b) {
                x(ix.sym(ix.S[t], a, b)) = p.S[t](a, b);
                if (ix.Q[t] >= 0) x(ix.sym(ix.Q[t], a, b)) = p.Q_pred[t](a, b);
            }
    }
    return x;
}

inline ProgramPoint unpack(const DCProgram& prog, const Vec& x) {
    const auto& ix = prog.index();
    if (x.size() != ix.size) throw InvalidArgument("decision vector has wrong length");
    ProgramPoint p;
    p.delta = Mat::Zero(ix.T, ix.M);
    p.gamma = Mat::Zero(ix.T, ix.M);
    p.S.assign(ix.T, Mat::Zero(ix.n, ix.n));
    p.Q_pred.assign(ix.T, Mat::Zero(ix.n, ix.n));
    for (int t = 0; t < ix.T; ++t) {
        for (int i = 0; i < ix.M; ++i)
            if (ix.delta(t, i) >= 0) {
                p.delta(t, i) = x(ix.delta(t, i));
                p.gamma(t, i) = x(ix.gamma(t, i));
            }
        for (int a = 0; a < ix.n; ++a)
            for (int b = a; b < ix.n; ++b) {
                p.S[t](a, b) = p.S[t](b, a) = x(ix.sym(ix.S[t], a, b));
                if (ix.Q[t] >= 0) p.Q_pred[t](a, b) = p.Q_pred[t](b, a) = x(ix.sym(ix.Q[t], a, b));
            }
        if (ix.Q[t] < 0) p.Q_pred[t] = prog.prior_info();
    }
    return p;
}

/// Q_{t|t} = Q_{t|t-1} + sum_i delta_{t,i} C_i^T C_i.
inline Mat q_filt(const DCProgram& prog, const ProgramPoint& p, int t) {
    const Mat& C = prog.bank().C();
    return symmetrize(p.Q_pred[t] + C.transpose() * p.delta.row(t).asDiagonal() * C);
}

// ---------------------------------------------------------------------------
// Affine LMI blocks F(x) = F0 + sum_k x_k F_k, stored as upper-triangular
// triplets. var = -1 is the constant part.

struct Triplet {
    int var;
    int row, col;
    double value;
};

struct AffineBlock {
    std::string kind;  // sensor | mse | trace | dynamics | stationarity
    int t = 0, sensor = -1;
    int size = 0;
    std::vector<Triplet> terms;

    void add(int var, int r, int c, double v) {
        if (v == 0.0) return;
        if (r > c) std::swap(r, c);
        terms.push_back({var, r, c, v});
    }

    Mat evaluate(const Vec& x) const {
        Mat F = Mat::Zero(size, size);
        for (const auto& tr : terms) {
            const double v = tr.var < 0 ? tr.value : tr.value * x(tr.var);
            F(tr.row, tr.col) += v;
            if (tr.row != tr.col) F(tr.col, tr.row) += v;
        }
        return F;
    }
};

struct LogTerm {
    int var;
    double weight;
};

/// minimize c^T x + c0 - sum_j w_j log x_{v_j}  s.t.  every block >= 0.
/// Objective in nats.
struct ConvexSubproblem {
    int nvar = 0;
    Vec c;
    double c0 = 0.0;
    std::vector<LogTerm> logs;
    std::vector<AffineBlock> blocks;

    double objective(const Vec& x) const {
        double f = c.dot(x) + c0;
        for (const auto& l : logs) f -= l.weight * std::log(x(l.var));
        return f;
    }

    int barrier_degree() const {
        int m = 0;
        for (const auto& b : blocks) m += b.size;
        return m;
    }

    /// min over blocks of lambda_min(F_b) / max(1, max|F_b|).
    double min_margin(const Vec& x) const {
        double worst = kInf;
        for (const auto& b : blocks) {
            const Mat F = b.evaluate(x);
            worst = std::min(worst, min_eigenvalue(F) / scale_of(F));
        }
        return worst;
    }
};

namespace detail {

inline void add_sym_var(AffineBlock& blk, const VariableIndex& ix, int offset, int r0, double coef = 1.0) {
    for (int a = 0; a < ix.n; ++a)
        for (int b = a; b < ix.n; ++b) blk.add(ix.sym(offset, a, b), r0 + a, r0 + b, coef);
}

inline void add_sym_const(AffineBlock& blk, const Mat& X, int r0) {
    for (int a = 0; a < X.rows(); ++a)
        for (int b = a; b < X.cols(); ++b) blk.add(-1, r0 + a, r0 + b, X(a, b));
}

// Q_{t|t-1} on the diagonal at r0, as variable or as fixed data.
inline void add_q_pred(AffineBlock& blk, const DCProgram& prog, int t, int r0) {
    const auto& ix = prog.index();
    if (ix.Q[t] >= 0)
        add_sym_var(blk, ix, ix.Q[t], r0);
    else
        add_sym_const(blk, prog.prior_info(), r0);
}

// Q_{t|t} = Q_{t|t-1} + sum_i delta C_i^T C_i on the diagonal at r0.
inline void add_q_filt(AffineBlock& blk, const DCProgram& prog, int t, int r0) {
    const auto& ix = prog.index();
    const Mat& C = prog.bank().C();
    add_q_pred(blk, prog, t, r0);
    for (int i = 0; i < ix.M; ++i) {
        if (ix.delta(t, i) < 0) continue;
        for (int a = 0; a < ix.n; ++a)
            for (int b = a; b < ix.n; ++b) blk.add(ix.delta(t, i), r0 + a, r0 + b, C(i, a) * C(i, b));
    }
}

// [[Q, QA, QF], [A^T Q, Qf_prev, 0], [F^T Q, 0, I]] with Q = Q_{t|t-1}.
inline AffineBlock coupling_block(const DCProgram& prog, int t_pred, int t_filt, const char* kind) {
    const auto& ix = prog.index();
    const int n = ix.n, m = prog.sys().m();
    const Mat& A = prog.sys().A();
    const Mat& F = prog.sys().F();
    AffineBlock blk;
    blk.kind = kind;
    blk.t = t_pred;
    blk.size = 2 * n + m;
    const int q = ix.Q[t_pred];
    add_sym_var(blk, ix, q, 0);
    for (int a = 0; a < n; ++a)
        for (int k = 0; k < n; ++k) {
            const int var = ix.sym(q, a, k);
            for (int b = 0; b < n; ++b) blk.add(var, a, n + b, A(k, b));
            for (int b = 0; b < m; ++b) blk.add(var, a, 2 * n + b, F(k, b));
        }
    add_q_filt(blk, prog, t_filt, n);
    for (int a = 0; a < m; ++a) blk.add(-1, 2 * n + a, 2 * n + a, 1.0);
    return blk;
}

}  // namespace detail

/// All LMI blocks of the relaxed program. The filtered information is
/// substituted, so there are no equality constraints.
inline std::vector<AffineBlock> assemble_blocks(const DCProgram& prog) {
    const auto& ix = prog.index();
    const int n = ix.n;
    const Mat& C = prog.bank().C();
    std::vector<AffineBlock> out;
    for (int t = 0; t < ix.T; ++t) {
        for (int i = 0; i < ix.M; ++i) {
            if (ix.delta(t, i) < 0) continue;
            AffineBlock blk;
            blk.kind = "sensor";
            blk.t = t;
            blk.sensor = i;
            blk.size = n + 1;
            const int d = ix.delta(t, i);
            blk.add(d, 0, 0, 1.0);
            blk.add(ix.gamma(t, i), 0, 0, -1.0);
            for (int b = 0; b < n; ++b) blk.add(d, 0, 1 + b, C(i, b));
            detail::add_q_pred(blk, prog, t, 1);
            for (int a = 0; a < n; ++a)
                for (int b = a; b < n; ++b) blk.add(d, 1 + a, 1 + b, C(i, a) * C(i, b));
            out.push_back(std::move(blk));
        }
        AffineBlock mse;
        mse.kind = "mse";
        mse.t = t;
        mse.size = 2 * n;
        detail::add_sym_var(mse, ix, ix.S[t], 0);
        for (int a = 0; a < n; ++a) mse.add(-1, a, n + a, 1.0);
        detail::add_q_filt(mse, prog, t, n);
        out.push_back(std::move(mse));
    }
    AffineBlock tr;
    tr.kind = "trace";
    tr.size = 1;
    tr.add(-1, 0, 0, prog.beta());
    for (int t = 0; t < ix.T; ++t)
        for (int a = 0; a < n; ++a) tr.add(ix.sym(ix.S[t], a, a), 0, 0, -1.0 / ix.T);
    out.push_back(std::move(tr));
    if (prog.is_infinite())
        out.push_back(detail::coupling_block(prog, 0, 0, "stationarity"));
    else
        for (int t = 1; t < ix.T; ++t) out.push_back(detail::coupling_block(prog, t, t - 1, "dynamics"));
    return out;
}

/// Weight of each (t, i) term in nats: alpha_i / (2T).
inline double term_weight(const DCProgram& prog, int i) {
    return prog.bank().alpha()(i) / (2.0 * prog.horizon());
}

/// CCP majorization at delta_hat: log delta <= delta/delta_hat - 1 + log delta_hat.
inline ConvexSubproblem linearize_subproblem(const DCProgram& prog, const Mat& delta_hat) {
    const auto& ix = prog.index();
    if (delta_hat.rows() != ix.T || delta_hat.cols() != ix.M)
        throw InvalidArgument("delta_hat must be T x M");
    ConvexSubproblem sub;
    sub.nvar = ix.size;
    sub.c = Vec::Zero(ix.size);
    for (int t = 0; t < ix.T; ++t)
        for (int i = 0; i < ix.M; ++i) {
            if (ix.delta(t, i) < 0) continue;
            const double dh = delta_hat(t, i);
            if (!(dh > 0.0) || !std::isfinite(dh))
                throw InvalidArgument("expansion point must be strictly positive");
            const double w = term_weight(prog, i);
            sub.c(ix.delta(t, i)) = w / dh;
            sub.c0 += w * (std::log(dh) - 1.0);
            sub.logs.push_back({ix.gamma(t, i), w});
        }
    sub.blocks = assemble_blocks(prog);
    return sub;
}

inline constexpr double kLn2 = 0.69314718055994530942;

/// The DC objective (1/T) sum alpha_i/2 (log2 delta - log2 gamma) in bits.
inline double dc_objective_bits(const DCProgram& prog, const ProgramPoint& p) {
    const auto& ix = prog.index();
    double f = 0.0;
    for (int t = 0; t < ix.T; ++t)
        for (int i = 0; i < ix.M; ++i)
            if (ix.delta(t, i) >= 0)
                f += term_weight(prog, i) * (std::log(p.delta(t, i)) - std::log(p.gamma(t, i)));
    return f / kLn2;
}

// ---------------------------------------------------------------------------
// Kalman view of an allocation.

struct CovarianceChain {
    std::vector<Mat> P_pred, P_filt;  // T entries (1 for infinite)
    double mse = 0.0;                 // (1/T) sum trace P_filt
};

/// Gaussian-model covariances for a T x M allocation (delta = 0 is zero rate).
inline CovarianceChain covariance_chain(const DCProgram& prog, const Mat& delta) {
    const Mat& C = prog.bank().C();
    const int T = prog.horizon();
    CovarianceChain ch;
    auto active_row = [&](int t) {
        Vec V(delta.cols());
        for (int i = 0; i < delta.cols(); ++i)
            V(i) = delta(t, i) > 0.0 && prog.mask()(t, i) ? 1.0 / delta(t, i) : kInf;
        return select_active(C, V);
    };
    if (prog.is_infinite()) {
        auto act = active_row(0);
        auto ss = steady_state_riccati(prog.sys(), act.C, act.V, RiccatiMethod::doubling);
        ch.P_pred.push_back(ss.P_pred);
        ch.P_filt.push_back(ss.P_filt);
        ch.mse = ss.P_filt.trace();
        return ch;
    }
    Mat P = prog.sys().P_init();
    for (int t = 0; t < T; ++t) {
        auto act = active_row(t);
        ch.P_pred.push_back(P);
        ch.P_filt.push_back(measurement_update(P, act.C, act.V).P_filt);
        ch.mse += ch.P_filt.back().trace() / T;
        P = time_update(ch.P_filt.back(), prog.sys());
    }
    return ch;
}

/// T x M table of Gaussian-model MI (bits) for an allocation.
inline Mat mi_table(const DCProgram& prog, const Mat& delta, const CovarianceChain& ch) {
    const Mat& C = prog.bank().C();
    Mat mi = Mat::Zero(delta.rows(), delta.cols());
    for (int t = 0; t < delta.rows(); ++t)
        for (int i = 0; i < delta.cols(); ++i)
            if (delta(t, i) > 0.0 && prog.mask()(t, i))
                mi(t, i) = sensor_mi(ch.P_pred[t], C.row(i), 1.0 / delta(t, i));
    return mi;
}

/// Cost of the original (unrelaxed) program: (1/T) sum alpha_i MI in bits.
inline double true_cost_bits(const DCProgram& prog, const Mat& delta) {
    const auto ch = covariance_chain(prog, delta);
    return horizon_cost(mi_table(prog, delta, ch), prog.bank().alpha());
}

/// Relaxation point with tight gamma, Q = P^{-1} and S = P_filt for a
/// given allocation; the recursion makes every coupling block singular.
inline ProgramPoint point_from_delta(const DCProgram& prog, const Mat& delta) {
    const auto& ix = prog.index();
    const auto ch = covariance_chain(prog, delta);
    ProgramPoint p;
    p.delta = Mat::Zero(ix.T, ix.M);
    p.gamma = Mat::Zero(ix.T, ix.M);
    for (int t = 0; t < ix.T; ++t) {
        p.Q_pred.push_back(ix.Q[t] >= 0 ? spd_inverse(ch.P_pred[t], "P_pred") : prog.prior_info());
        p.S.push_back(ch.P_filt[t]);
        const Mat Pp = spd_inverse(p.Q_pred[t], "Q_pred");
        for (int i = 0; i < ix.M; ++i) {
            if (ix.delta(t, i) < 0) continue;
            const double d = delta(t, i);
            const double c = prog.bank().C().row(i) * Pp * prog.bank().C().row(i).transpose();
            p.delta(t, i) = d;
            p.gamma(t, i) = d / (1.0 + d * c);
        }
    }
    return p;
}

// ---------------------------------------------------------------------------
// Covariance reconstruction for the relaxed program.

struct Reconstruction {
    std::vector<Mat> Q_pred, Q_filt;  // Q**
    std::vector<double> min_eig_pred, min_eig_filt;  // lambda_min(Q** - Q*)
    bool consistent = true;
    double worst = kInf;
};

/// Q**_{t|t-1}^{-1} = A Q**_{t-1|t-1}^{-1} A^T + F F^T, started from the
/// relaxed solution's first prediction, and the order check Q** >= Q*.
inline Reconstruction reconstruct_covariances(const DCProgram& prog, const ProgramPoint& p,
                                              double tol = 1e-6) {
    const auto& ix = prog.index();
    const Mat& C = prog.bank().C();
    Reconstruction r;
    Mat Qp = p.Q_pred[0];
    if (prog.is_infinite()) {
        // Stationary chain: the recursion's fixed point.
        Vec V(ix.M);
        for (int i = 0; i < ix.M; ++i) V(i) = p.delta(0, i) > 0 ? 1.0 / p.delta(0, i) : kInf;
        auto act = select_active(C, V);
        Qp = spd_inverse(steady_state_riccati(prog.sys(), act.C, act.V, RiccatiMethod::doubling).P_pred,
                         "stationary P_pred");
    }
    for (int t = 0; t < ix.T; ++t) {
        if (t > 0)
            Qp = spd_inverse(time_update(spd_inverse(r.Q_filt.back(), "Q**_filt"), prog.sys()), "P**_pred");
        r.Q_pred.push_back(Qp);
        r.Q_filt.push_back(symmetrize(Qp + C.transpose() * p.delta.row(t).asDiagonal() * C));
        const double ep = min_eigenvalue(symmetrize(Qp - p.Q_pred[t])) / scale_of(Qp);
        const double ef = min_eigenvalue(symmetrize(r.Q_filt.back() - q_filt(prog, p, t))) / scale_of(Qp);
        r.min_eig_pred.push_back(ep);
        r.min_eig_filt.push_back(ef);
        r.worst = std::min({r.worst, ep, ef});
    }
    r.consistent = r.worst >= -tol;
    return r;
}

// ---------------------------------------------------------------------------

struct Allocation {
    Mat delta;       // T x M
    Mat V;           // inf where zero rate
    Mat Delta_sens;  // sqrt(12 V), inf where zero rate
    Mask support;

    int support_size() const { return static_cast<int>(support.count()); }
    int support_size(int t) const { return static_cast<int>(support.row(t).count()); }
};

/// delta < zero_threshold * max(delta) (or exactly 0) is a zero-rate sensor.
inline Allocation extract_allocation(const Mat& delta, double zero_threshold = 1e-6) {
    Allocation a;
    const double top = delta.size() ? delta.maxCoeff() : 0.0;
    a.delta = delta;
    a.V = Mat::Constant(delta.rows(), delta.cols(), kInf);
    a.Delta_sens = a.V;
    a.support = Mask::Constant(delta.rows(), delta.cols(), false);
    for (int t = 0; t < delta.rows(); ++t)
        for (int i = 0; i < delta.cols(); ++i) {
            const double d = delta(t, i);
            if (!(d > 0.0) || d < zero_threshold * top) {
                a.delta(t, i) = 0.0;
                continue;
            }
            a.support(t, i) = true;
            a.V(t, i) = 1.0 / d;
            a.Delta_sens(t, i) = std::sqrt(12.0 * a.V(t, i));
        }
    return a;
}

/// One row per (t, sensor), 1-based t; V and Delta are "inf" at zero rate.
inline void write_allocation_csv(std::ostream& os, const Allocation& a) {
    os << "t,sensor,delta,V,Delta,support\n";
    os.precision(17);
    for (int t = 0; t < a.delta.rows(); ++t)
        for (int i = 0; i < a.delta.cols(); ++i)
            os << t + 1 << ',' << i << ',' << a.delta(t, i) << ',' << a.V(t, i) << ',' << a.Delta_sens(t, i) << ','
               << (a.support(t, i) ? 1 : 0) << '\n';
}

/// Reads the V column back as a T x M matrix (inf = zero rate).
inline Mat read_allocation_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line.rfind("t,sensor,delta,V", 0) != 0)
        throw InvalidArgument("allocation CSV must start with the header t,sensor,delta,V,...");
    std::vector<std::array<double, 3>> rows;  // t, sensor, V
    int T = 0, M = 0, lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string f[4];
        for (auto& x : f)
            if (!std::getline(ss, x, ',')) throw InvalidArgument("allocation CSV line " + std::to_string(lineno) + " is short");
        try {
            const int t = std::stoi(f[0]), i = std::stoi(f[1]);
            const double V = std::stod(f[3]);
            if (t < 1 || i < 0 || !(V > 0.0)) throw InvalidArgument("");
            rows.push_back({double(t), double(i), V});
            T = std::max(T, t);
            M = std::max(M, i + 1);
        } catch (const std::exception&) {
            throw InvalidArgument("allocation CSV line " + std::to_string(lineno) + " has a bad value");
        }
    }
    if (rows.empty()) throw InvalidArgument("allocation CSV has no rows");
    if (rows.size() != static_cast<std::size_t>(T) * M) throw InvalidArgument("allocation CSV is not a full T x M table");
    Mat V = Mat::Constant(T, M, std::numeric_limits<double>::quiet_NaN());
    for (const auto& r : rows) V(int(r[0]) - 1, int(r[1])) = r[2];
    if (V.hasNaN()) throw InvalidArgument("allocation CSV repeats an entry");
    return V;
}

// ---------------------------------------------------------------------------
// JSON dump of a subproblem.

inline nlohmann::json subproblem_to_json(const ConvexSubproblem& sub) {
    nlohmann::json j;
    j["format"] = "ratealloc-subproblem-1";
    j["units"] = "nats";
    j["nvar"] = sub.nvar;
    j["objective"]["linear"] = std::vector<double>(sub.c.data(), sub.c.data() + sub.c.size());
    j["objective"]["constant"] = sub.c0;
    auto& logs = j["objective"]["neg_log"] = nlohmann::json::array();
    for (const auto& l : sub.logs) logs.push_back({{"var", l.var}, {"weight", l.weight}});
    auto& blocks = j["blocks"] = nlohmann::json::array();
    for (const auto& b : sub.blocks) {
        nlohmann::json jb;
        jb["kind"] = b.kind;
        jb["t"] = b.t;
        jb["sensor"] = b.sensor;
        jb["size"] = b.size;
        auto& terms = jb["terms"] = nlohmann::json::array();
        for (const auto& tr : b.terms) terms.push_back({tr.var, tr.row, tr.col, tr.value});
        blocks.push_back(std::move(jb));
    }
    return j;
}

inline ConvexSubproblem subproblem_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format") != "ratealloc-subproblem-1") throw InvalidArgument("unknown dump format");
        ConvexSubproblem sub;
        sub.nvar = j.at("nvar").get<int>();
        const auto lin = j.at("objective").at("linear").get<std::vector<double>>();
        if (static_cast<int>(lin.size()) != sub.nvar) throw InvalidArgument("linear term length mismatch");
        sub.c = Eigen::Map<const Vec>(lin.data(), sub.nvar);
        sub.c0 = j.at("objective").at("constant").get<double>();
        for (const auto& l : j.at("objective").at("neg_log"))
            sub.logs.push_back({l.at("var").get<int>(), l.at("weight").get<double>()});
        for (const auto& jb : j.at("blocks")) {
            AffineBlock b;
            b.kind = jb.at("kind").get<std::string>();
            b.t = jb.at("t").get<int>();
            b.sensor = jb.at("sensor").get<int>();
            b.size = jb.at("size").get<int>();
            for (const auto& tr : jb.at("terms")) {
                Triplet x{tr.at(0).get<int>(), tr.at(1).get<int>(), tr.at(2).get<int>(), tr.at(3).get<double>()};
                if (x.var >= sub.nvar || x.row < 0 || x.col >= b.size || x.row > x.col)
                    throw InvalidArgument("block term out of range");
                b.terms.push_back(x);
            }
            sub.blocks.push_back(std::move(b));
        }
        return sub;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("malformed subproblem dump: ") + e.what());
    }
}

}  // namespace ratealloc
