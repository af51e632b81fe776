#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "ratealloc/ccp.hpp"
#include "ratealloc/network.hpp"

namespace ratealloc {

// ---------------------------------------------------------------------------
// Scalar closed form: x+ = a x + f w, one sensor y = x.

struct ScalarOracle {
    double P_star = 0.0;  // optimal stationary filtered variance
    double value = 0.0;   // max{0, log2(a^2 + f^2 / beta)} = 2 x optimal rate
    double rate = 0.0;    // bits per step
    double V_star = 0.0;  // inf when the sensor is dropped
};

inline ScalarOracle scalar_oracle(double a, double f, double beta) {
    if (!(std::abs(a) < 1.0)) throw UnsupportedDomain("scalar oracle needs |a| < 1");
    if (f == 0.0 || !std::isfinite(f)) throw InvalidArgument("scalar oracle needs finite f != 0");
    if (!(beta > 0.0)) throw InvalidArgument("scalar oracle needs beta > 0");
    ScalarOracle o;
    const double open = f * f / (1.0 - a * a);
    o.P_star = std::min(beta, open);
    o.value = std::max(0.0, std::log2(a * a + f * f / beta));
    o.rate = 0.5 * o.value;
    o.V_star = o.P_star >= open ? kInf : 1.0 / (1.0 / o.P_star - 1.0 / (a * a * o.P_star + f * f));
    return o;
}

// ---------------------------------------------------------------------------
// Heat diffusion along a rod, one temperature sensor per node.

struct HeatConfig {
    int nodes = 60;
    double diffusivity = 7.5e-7;
    double segment_length = 0.2459;
    HeatModelVariant variant = HeatModelVariant::as_printed;
};

inline DCProgram heat_program(const HeatConfig& cfg, double beta) {
    auto sys = build_heat_system(cfg.nodes, cfg.diffusivity, cfg.segment_length, cfg.variant);
    return DCProgram::infinite(sys, SensorBank::uniform(Mat::Identity(cfg.nodes, cfg.nodes)), beta);
}

struct HeatResult {
    CCPResult ccp;
    RateReport rates;
};

inline RateReport rate_report(const DCProgram& prog, const Mat& delta) {
    return RateReport::from_mi(mi_table(prog, delta, covariance_chain(prog, delta)), prog.bank().alpha());
}

inline HeatResult heat_demo(double beta, const HeatConfig& cfg = {}, const CCPOptions& opt = {}) {
    const auto prog = heat_program(cfg, beta);
    HeatResult r;
    r.ccp = run_ccp(prog, opt);
    r.rates = rate_report(prog, r.ccp.allocation.delta);
    return r;
}

// ---------------------------------------------------------------------------
// Budget sweep.

struct SweepRow {
    double beta = 0.0;
    int support = 0;
    double objective = 0.0;  // bits
    double mse = 0.0;
    std::string status;  // "ok", "infeasible" or the error text
};

/// Worker cap from RATE_ALLOC_THREADS (default 1).
inline int thread_cap() {
    if (const char* s = std::getenv("RATE_ALLOC_THREADS")) {
        try {
            const int k = std::stoi(s);
            if (k >= 1) return k;
        } catch (const std::exception&) {
        }
        throw InvalidArgument("RATE_ALLOC_THREADS must be a positive integer");
    }
    return 1;
}

/// One CCP run per distinct beta (sorted ascending), spread over `threads` workers.
inline std::vector<SweepRow> sweep_support(const std::function<DCProgram(double)>& make, std::vector<double> betas,
                                           int threads, const CCPOptions& opt = {}) {
    std::sort(betas.begin(), betas.end());
    betas.erase(std::unique(betas.begin(), betas.end()), betas.end());
    if (betas.empty()) throw InvalidArgument("empty budget grid");
    std::vector<SweepRow> rows(betas.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t k; (k = next++) < betas.size();) {
            SweepRow& r = rows[k];
            r.beta = betas[k];
            try {
                auto res = run_ccp(make(betas[k]), opt);
                r.support = res.allocation.support_size();
                r.objective = res.objective;
                r.mse = res.mse;
                r.status = "ok";
            } catch (const InfeasibleBudget&) {
                r.status = "infeasible";
            } catch (const Error& e) {
                r.status = e.what();
            }
        }
    };
    threads = std::max(1, std::min<int>(threads, static_cast<int>(betas.size())));
    std::vector<std::thread> pool;
    for (int k = 1; k < threads; ++k) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();
    return rows;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
    os << "beta,support,objective_bits,mse,status\n";
    os.precision(12);
    for (const auto& r : rows) os << r.beta << ',' << r.support << ',' << r.objective << ',' << r.mse << ',' << r.status << '\n';
}

// ---------------------------------------------------------------------------
// Radar tracking by a drone swarm: 5 targets (p_x, p_y, v_x, v_y), 5 drones
// per target, each drone reporting a bistatic delay and Doppler.

namespace radar {

using Vec2 = Eigen::Vector2d;
using Vec4 = Eigen::Vector4d;
using Mat24 = Eigen::Matrix<double, 2, 4>;

/// (delay, Doppler) seen by a drone at d moving with u; base station at the origin.
inline Eigen::Vector2d measure(const Vec4& target, const Vec2& d, const Vec2& u) {
    const Vec2 p = target.head<2>(), v = target.tail<2>();
    const Vec2 r = p - d;
    const double np = p.norm(), nr = r.norm();
    return {np + nr, v.dot(p) / np + (v - u).dot(r) / nr};
}

/// Rows: delay, Doppler; columns: p_x, p_y, v_x, v_y.
inline Mat24 jacobian(const Vec4& target, const Vec2& d, const Vec2& u) {
    const Vec2 p = target.head<2>(), v = target.tail<2>();
    const Vec2 r = p - d, w = v - u;
    const double np = p.norm(), nr = r.norm();
    const Vec2 ep = p / np, er = r / nr;
    Mat24 J = Mat24::Zero();
    J.block<1, 2>(0, 0) = (ep + er).transpose();
    J.block<1, 2>(1, 0) = ((v - v.dot(ep) * ep) / np + (w - w.dot(er) * er) / nr).transpose();
    J.block<1, 2>(1, 2) = (ep + er).transpose();
    return J;
}

}  // namespace radar

struct DroneConfig {
    int targets = 5;
    int drones_per_target = 5;
    double dt = 1.0;
    double K_P = 0.05, K_D = 0.4, L_P = 0.01, L_D = 0.05;
    double noise_scale = 1.0;        // multiplies F F^T = diag(10, 10, 1, 1)
    double init_pos_var = 100.0;     // initial estimate covariance (position)
    double init_vel_var = 1.0;       // initial estimate covariance (velocity)
    bool perfect_init = false;       // start the EKF at the true state
    bool static_drones = false;      // freeze the swarm
    double ring_radius = 50.0;
    double target_spacing = 1000.0;
    double target_offset = 3000.0;   // distance of the target row from the base station
    double init_speed = 1.0;         // std of the initial target velocity components
    bool full_rate = false;          // skip allocation, send every innovation unquantized with V = full_rate_V
    double full_rate_V = 1e-6;
    double divergence_trace = 1e6;
    // Pruning reaches the same support after a few iterations per round; the
    // long 1/k tail of each round is not worth paying at every step. A capped
    // round is not a fixed point, so a pruned round may end slightly above it.
    CCPOptions ccp = [] {
        CCPOptions o;
        o.max_iter = 10;
        o.prune_slack = 1e-3;
        return o;
    }();
};

struct DroneStep {
    int t = 0;
    Allocation allocation;  // 1 x M
    bool flagged = false;
    double trace_pred = 0.0, trace_filt = 0.0, sq_error = 0.0;
    Vec bits, mi;  // per sensor
    Vec target;    // true state (4 x targets)
    Vec estimate;  // filtered estimate
    Mat drones;    // (targets * drones_per_target) x 4: p_x, p_y, v_x, v_y
    int ccp_iterations = 0;
};

struct DroneLog {
    std::vector<DroneStep> steps;
    std::vector<std::string> labels;
    int sensors_per_region = 0;

    int distinct_supports() const {
        std::set<std::vector<bool>> s;
        for (const auto& st : steps) {
            std::vector<bool> v(static_cast<std::size_t>(st.allocation.support.size()));
            for (int i = 0; i < st.allocation.support.size(); ++i) v[i] = st.allocation.support(i);
            s.insert(std::move(v));
        }
        return static_cast<int>(s.size());
    }

    void write_allocation_csv(std::ostream& os) const {
        os << "t,sensor,label,delta,mi_bits,empirical_bits,flagged\n";
        os.precision(12);
        for (const auto& st : steps)
            for (int i = 0; i < st.allocation.delta.cols(); ++i)
                os << st.t << ',' << i << ',' << labels[i] << ',' << st.allocation.delta(0, i) << ',' << st.mi(i) << ','
                   << st.bits(i) << ',' << (st.flagged ? 1 : 0) << '\n';
    }

    void write_mse_csv(std::ostream& os) const {
        os << "t,trace_p_pred,trace_p_filt,sq_error,flagged,ccp_iterations\n";
        os.precision(12);
        for (const auto& st : steps)
            os << st.t << ',' << st.trace_pred << ',' << st.trace_filt << ',' << st.sq_error << ','
               << (st.flagged ? 1 : 0) << ',' << st.ccp_iterations << '\n';
    }

    void write_tracks_csv(std::ostream& os) const {
        os << "t,kind,id,region,p_x,p_y\n";
        os.precision(12);
        for (const auto& st : steps) {
            const int T = static_cast<int>(st.target.size() / 4);
            const int D = static_cast<int>(st.drones.rows());
            for (int i = 0; i < T; ++i)
                os << st.t << ",target," << i << ',' << i << ',' << st.target(4 * i) << ',' << st.target(4 * i + 1) << '\n';
            for (int i = 0; i < T; ++i)
                os << st.t << ",estimate," << i << ',' << i << ',' << st.estimate(4 * i) << ','
                   << st.estimate(4 * i + 1) << '\n';
            for (int k = 0; k < D; ++k)
                os << st.t << ",drone," << k << ',' << k / (D / T) << ',' << st.drones(k, 0) << ',' << st.drones(k, 1)
                   << '\n';
        }
    }
};

class DroneWorld {
public:
    explicit DroneWorld(DroneConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), rng_(CounterRng(seed).split(0x7a29)) {
        if (cfg_.targets < 1 || cfg_.drones_per_target < 1) throw InvalidArgument("need at least one target and drone");
        const int N = cfg_.targets;
        Mat At = Mat::Identity(4, 4);
        At(0, 2) = At(1, 3) = cfg_.dt;
        A_ = Mat::Zero(4 * N, 4 * N);
        F_ = Mat::Zero(4 * N, 4 * N);
        Vec fdiag(4);
        fdiag << std::sqrt(10.0), std::sqrt(10.0), 1.0, 1.0;
        for (int i = 0; i < N; ++i) {
            A_.block(4 * i, 4 * i, 4, 4) = At;
            F_.block(4 * i, 4 * i, 4, 4) = (std::sqrt(cfg_.noise_scale) * fdiag).asDiagonal();
        }
        x_ = Vec::Zero(4 * N);
        for (int i = 0; i < N; ++i) {
            x_(4 * i) = (i - 0.5 * (N - 1)) * cfg_.target_spacing;
            x_(4 * i + 1) = cfg_.target_offset;
            x_(4 * i + 2) = cfg_.init_speed * rng_.normal();
            x_(4 * i + 3) = cfg_.init_speed * rng_.normal();
        }
        const int D = N * cfg_.drones_per_target;
        drones_ = Mat::Zero(D, 4);
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < cfg_.drones_per_target; ++j) {
                const double ang = 2.0 * std::numbers::pi * j / cfg_.drones_per_target;
                drones_.row(i * cfg_.drones_per_target + j) << x_(4 * i) + cfg_.ring_radius * std::cos(ang),
                    x_(4 * i + 1) + cfg_.ring_radius * std::sin(ang), 0.0, 0.0;
            }
        P0_ = Mat::Zero(4 * N, 4 * N);
        for (int i = 0; i < N; ++i) {
            P0_(4 * i, 4 * i) = P0_(4 * i + 1, 4 * i + 1) = cfg_.init_pos_var;
            P0_(4 * i + 2, 4 * i + 2) = P0_(4 * i + 3, 4 * i + 3) = cfg_.init_vel_var;
        }
        // Per region: delays then Dopplers.
        for (int i = 0; i < N; ++i) {
            for (int j = 0; j < cfg_.drones_per_target; ++j)
                labels_.push_back("tau[" + std::to_string(i + 1) + "," + std::to_string(j + 1) + "]");
            for (int j = 0; j < cfg_.drones_per_target; ++j)
                labels_.push_back("f[" + std::to_string(i + 1) + "," + std::to_string(j + 1) + "]");
        }
    }

    int n() const { return static_cast<int>(x_.size()); }
    int M() const { return 2 * cfg_.targets * cfg_.drones_per_target; }
    const Mat& A() const { return A_; }
    const Mat& F() const { return F_; }
    const Mat& P0() const { return P0_; }
    const Vec& state() const { return x_; }
    const Mat& drones() const { return drones_; }
    const std::vector<std::string>& labels() const { return labels_; }

    /// Sensor index of (region, drone, kind) with kind 0 = delay, 1 = Doppler.
    int sensor(int region, int drone, int kind) const {
        return region * 2 * cfg_.drones_per_target + kind * cfg_.drones_per_target + drone;
    }

    /// Stacked measurements of state x with the current swarm.
    Vec measure(const Vec& x) const {
        Vec y(M());
        for (int i = 0; i < cfg_.targets; ++i)
            for (int j = 0; j < cfg_.drones_per_target; ++j) {
                const auto dr = drones_.row(i * cfg_.drones_per_target + j);
                const auto m = radar::measure(x.segment<4>(4 * i), dr.head<2>().transpose(), dr.tail<2>().transpose());
                y(sensor(i, j, 0)) = m(0);
                y(sensor(i, j, 1)) = m(1);
            }
        return y;
    }

    /// Measurement Jacobian at x (M x n, block sparse).
    Mat jacobian(const Vec& x) const {
        Mat C = Mat::Zero(M(), n());
        for (int i = 0; i < cfg_.targets; ++i)
            for (int j = 0; j < cfg_.drones_per_target; ++j) {
                const auto dr = drones_.row(i * cfg_.drones_per_target + j);
                const auto J = radar::jacobian(x.segment<4>(4 * i), dr.head<2>().transpose(), dr.tail<2>().transpose());
                C.block(sensor(i, j, 0), 4 * i, 1, 4) = J.row(0);
                C.block(sensor(i, j, 1), 4 * i, 1, 4) = J.row(1);
            }
        return C;
    }

    /// PD law with in-region spacing terms, driven by the target estimate.
    void move_drones(const Vec& estimate) {
        if (cfg_.static_drones) return;
        const int P = cfg_.drones_per_target;
        Mat next = drones_;
        for (int i = 0; i < cfg_.targets; ++i) {
            const Eigen::Vector2d ph = estimate.segment<2>(4 * i), vh = estimate.segment<2>(4 * i + 2);
            for (int j = 0; j < P; ++j) {
                const int k = i * P + j;
                const Eigen::Vector2d p = drones_.row(k).head<2>().transpose(), v = drones_.row(k).tail<2>().transpose();
                Eigen::Vector2d a = cfg_.K_P * (ph - p) + cfg_.K_D * (vh - v);
                for (int l = 0; l < P; ++l) {
                    if (l == j) continue;
                    const int q = i * P + l;
                    a -= cfg_.L_P * (drones_.row(q).head<2>().transpose() - p);
                    a -= cfg_.L_D * (drones_.row(q).tail<2>().transpose() - v);
                }
                next.row(k).head<2>() = (p + cfg_.dt * v).transpose();
                next.row(k).tail<2>() = (v + cfg_.dt * a).transpose();
            }
        }
        drones_ = next;
    }

    void advance_targets() {
        Vec w(n());
        for (int k = 0; k < n(); ++k) w(k) = rng_.normal();
        x_ = A_ * x_ + F_ * w;
    }

    CounterRng& rng() { return rng_; }

private:
    DroneConfig cfg_;
    CounterRng rng_;
    Mat A_, F_, P0_;
    Vec x_;
    Mat drones_;
    std::vector<std::string> labels_;
};

/// Closed-loop run: per-step allocation, ECDQ transport of the innovations,
/// EKF update at the fusion center, swarm control from the estimate.
inline DroneLog drone_demo(int steps, double beta, std::uint64_t seed, const DroneConfig& cfg = {}) {
    if (steps < 1) throw InvalidArgument("steps must be >= 1");
    DroneWorld world(cfg, seed);
    const int n = world.n(), M = world.M();
    GaussMarkovSystem model(world.A(), world.F(), world.P0());
    PerStepAllocator alloc(beta, cfg.ccp);
    std::vector<DitherStream> sensor_dither, center_dither;
    for (int i = 0; i < M; ++i) {
        sensor_dither.emplace_back(i, seed);
        center_dither.emplace_back(i, seed);
    }
    DroneLog log;
    log.labels = world.labels();
    log.sensors_per_region = 2 * cfg.drones_per_target;

    CounterRng init = CounterRng(seed).split(0x1417);
    Vec x_pred = world.state();
    if (!cfg.perfect_init) {
        const Mat root = psd_sqrt(world.P0());
        Vec z(n);
        for (int k = 0; k < n; ++k) z(k) = init.normal();
        x_pred += root * z;
    }
    Mat P_pred = cfg.perfect_init ? Mat(Mat::Zero(n, n)) : world.P0();
    const Vec alpha = Vec::Ones(M);

    for (int t = 0; t < steps; ++t) {
        DroneStep st;
        st.t = t + 1;
        const Mat C = world.jacobian(x_pred);
        if (cfg.full_rate) {
            st.allocation = extract_allocation(Mat::Constant(1, M, 1.0 / cfg.full_rate_V));
        } else {
            auto a = alloc.allocate(P_pred, C, alpha);
            st.allocation = a.allocation;
            st.flagged = a.flagged;
            st.ccp_iterations = a.ccp_iterations;
        }
        const Vec y = world.measure(world.state());
        const Vec y_pred = world.measure(x_pred);
        const Vec V = st.allocation.V.row(0).transpose();
        st.bits = Vec::Zero(M);
        st.mi = Vec::Zero(M);
        Vec eta = Vec::Zero(M);
        for (int i = 0; i < M; ++i) {
            if (std::isinf(V(i))) continue;
            const double var = (C.row(i) * P_pred * C.row(i).transpose())(0, 0);
            st.mi(i) = sensor_mi(P_pred, C.row(i), V(i));
            if (cfg.full_rate) {
                eta(i) = y(i) - y_pred(i);
                continue;
            }
            const QuantizerConfig qc(std::sqrt(12.0 * V(i)));
            const auto tt = static_cast<std::uint64_t>(t);
            const auto sent = encode_innovation(y(i), y_pred(i), var, qc, sensor_dither[i].at(tt, qc.delta));
            eta(i) = decode_innovation(sent.code, var, qc, center_dither[i].at(tt, qc.delta));
            st.bits(i) = static_cast<double>(sent.code.length);
        }
        const auto act = select_active(C, V);
        const auto upd = measurement_update(P_pred, act.C, act.V);
        Vec x_filt = x_pred;
        if (!act.index.empty()) {
            Vec e(static_cast<Eigen::Index>(act.index.size()));
            for (std::size_t r = 0; r < act.index.size(); ++r) e(r) = eta(act.index[r]);
            x_filt += upd.gain * e;
        }
        st.trace_pred = P_pred.trace();
        st.trace_filt = upd.P_filt.trace();
        st.sq_error = (world.state() - x_filt).squaredNorm();
        st.target = world.state();
        st.estimate = x_filt;
        st.drones = world.drones();
        log.steps.push_back(std::move(st));
        if (!(upd.P_filt.trace() <= cfg.divergence_trace))
            throw NumericalFailure("EKF diverged at step " + std::to_string(t + 1) +
                                   ": trace P = " + std::to_string(upd.P_filt.trace()));

        world.move_drones(x_filt);
        world.advance_targets();
        x_pred = world.A() * x_filt;
        P_pred = time_update(upd.P_filt, model);
    }
    return log;
}

}  // namespace ratealloc
