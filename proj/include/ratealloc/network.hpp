#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <vector>

#include "ratealloc/ecdq.hpp"
#include "ratealloc/info_cost.hpp"
#include "ratealloc/kalman.hpp"
#include "ratealloc/model.hpp"

namespace ratealloc {

// ECDQ sensor network: every active sensor quantizes its innovation with a
// subtractive dither, entropy-codes the index, and the fusion center decodes
// the codeword with its own copy of the dither and runs the Kalman filter
// with V = Delta^2 / 12.

struct NetworkOptions {
    std::uint64_t seed = 1;
    int steps = 1000;
    int burn_in = 0;       // leading steps excluded from the statistics
    int batches = 50;      // batch means for the MSE standard error
    bool keep_frames = false;
};

struct NetworkResult {
    Mat lengths;     // steps x M codeword bits (0 for zero-rate sensors)
    Mat mi;          // steps x M Gaussian-model mutual information (bits)
    Vec sq_error;    // ||x_t - x_hat_{t|t}||^2
    Vec trace_filt;  // Gaussian-model trace P_{t|t}
    std::vector<Frame> frames;
    int burn_in = 0;

    int steps() const { return static_cast<int>(sq_error.size()); }
    int counted() const { return steps() - burn_in; }

    double empirical_mse() const { return sq_error.tail(counted()).mean(); }
    double model_mse() const { return trace_filt.tail(counted()).mean(); }

    /// Standard error of empirical_mse from non-overlapping batch means.
    double mse_stderr(int batches = 50) const {
        const int N = counted();
        batches = std::max(2, std::min(batches, N / 2));
        const int len = N / batches;
        Vec means(batches);
        for (int b = 0; b < batches; ++b) means(b) = sq_error.segment(burn_in + b * len, len).mean();
        const double m = means.mean();
        return std::sqrt((means.array() - m).square().sum() / (batches - 1) / batches);
    }

    Vec mean_lengths() const { return lengths.bottomRows(counted()).colwise().mean().transpose(); }
    Vec mean_mi() const { return mi.bottomRows(counted()).colwise().mean().transpose(); }

    /// Per-step, per-sensor rows (1-based t).
    void write_empirical_csv(std::ostream& os) const {
        os << "t,sensor,mi_bits,empirical_bits\n";
        os.precision(12);
        for (int t = 0; t < lengths.rows(); ++t)
            for (int i = 0; i < lengths.cols(); ++i)
                os << t + 1 << ',' << i << ',' << mi(t, i) << ',' << lengths(t, i) << '\n';
    }

    void write_mse_csv(std::ostream& os) const {
        os << "t,sq_error,trace_p_filt\n";
        os.precision(12);
        for (int t = 0; t < steps(); ++t) os << t + 1 << ',' << sq_error(t) << ',' << trace_filt(t) << '\n';
    }
};

/// V is T_alloc x M (inf = zero rate); step t uses row t mod T_alloc.
inline NetworkResult simulate_network(const GaussMarkovSystem& sys, const SensorBank& bank, const Mat& V,
                                      const NetworkOptions& opt = {}) {
    check_dimensions(sys, bank);
    const int n = sys.n(), M = bank.M();
    if (V.cols() != M || V.rows() < 1) throw InvalidArgument("allocation must have one column per sensor");
    if (opt.steps < 1 || opt.burn_in < 0 || opt.burn_in >= opt.steps)
        throw InvalidArgument("need steps >= 1 and 0 <= burn_in < steps");
    for (int k = 0; k < V.size(); ++k)
        if (!(V(k) > 0.0)) throw InvalidArgument("quantizer noise variances must be positive (inf for zero rate)");

    const Mat& C = bank.C();
    const auto tr = simulate_source(sys, bank, opt.steps, opt.seed);
    std::vector<DitherStream> sensor_dither, center_dither;
    for (int i = 0; i < M; ++i) {
        sensor_dither.emplace_back(i, opt.seed);
        center_dither.emplace_back(i, opt.seed);
    }

    NetworkResult res;
    res.burn_in = opt.burn_in;
    res.lengths = Mat::Zero(opt.steps, M);
    res.mi = Mat::Zero(opt.steps, M);
    res.sq_error.resize(opt.steps);
    res.trace_filt.resize(opt.steps);

    FilterState st = initial_filter_state(sys);
    Vec y_hat(M);
    for (int t = 0; t < opt.steps; ++t) {
        const Vec Vrow = V.row(t % V.rows()).transpose();
        const Mat& Pp = st.riccati.P_pred;
        const Vec x = tr.states.row(t).transpose();
        const Vec y_pred = C * st.x_pred;
        for (int i = 0; i < M; ++i) {
            if (std::isinf(Vrow(i))) continue;
            const double var = (C.row(i) * Pp * C.row(i).transpose())(0, 0);
            const QuantizerConfig cfg(std::sqrt(12.0 * Vrow(i)));
            const auto tt = static_cast<std::uint64_t>(t);
            const auto sent = encode_innovation(tr.measurements(t, i), y_pred(i), var, cfg,
                                                sensor_dither[i].at(tt, cfg.delta));
            const double eta = decode_innovation(sent.code, var, cfg, center_dither[i].at(tt, cfg.delta));
            if (eta != sent.eta) throw DecodeError("fusion center reconstruction differs from the sensor's");
            y_hat(i) = y_pred(i) + eta;
            res.lengths(t, i) = static_cast<double>(sent.code.length);
            res.mi(t, i) = sensor_mi(Pp, C.row(i), Vrow(i));
            if (opt.keep_frames)
                res.frames.push_back({static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(i), sent.code});
        }
        st = lmmse_step_row(st, sys, C, Vrow, y_hat);
        res.sq_error(t) = (x - st.x_filt).squaredNorm();
        res.trace_filt(t) = st.riccati.P_filt.trace();
    }
    return res;
}

}  // namespace ratealloc
