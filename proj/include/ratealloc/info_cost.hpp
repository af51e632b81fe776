#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <ostream>

#include "ratealloc/errors.hpp"
#include "ratealloc/linalg.hpp"

namespace ratealloc {

// 1 + 0.5 log2(2 pi e / 12): Shannon-code slack plus the space-filling loss
// of a scalar lattice quantizer.
inline const double kSandwichGap = 1.0 + 0.5 * std::log2(2.0 * std::numbers::pi * std::numbers::e / 12.0);

/// I(theta; theta + v) in bits under the Gaussian model, theta ~ N(0, C P C^T), v ~ N(0, V).
inline double sensor_mi(const Mat& P_pred, const Eigen::RowVectorXd& C_i, double V_i) {
    if (!(V_i > 0.0)) throw InvalidArgument("noise variance must be positive");
    if (std::isinf(V_i)) return 0.0;
    const double s = C_i * P_pred * C_i.transpose();
    return 0.5 * std::log2(1.0 + std::max(0.0, s) / V_i);
}

/// (1/T) sum_t sum_i alpha_i MI(t, i).
inline double horizon_cost(const Mat& mi, const Vec& alpha) {
    if (mi.cols() != alpha.size()) throw InvalidArgument("MI table and weights disagree on M");
    if (mi.rows() == 0) return 0.0;
    return (mi * alpha).sum() / static_cast<double>(mi.rows());
}

inline double snr(double range, double tx_power, double bandwidth, double noise_psd,
                  double path_gain = 1.0) {
    if (!(range > 0) || !(tx_power > 0) || !(bandwidth > 0) || !(noise_psd > 0) || !(path_gain > 0))
        throw InvalidArgument("link parameters must be positive");
    return path_gain * tx_power / (range * range * bandwidth * noise_psd);
}

inline double capacity(double bandwidth, double snr_value) {
    if (!(bandwidth > 0) || !(snr_value > 0)) throw InvalidArgument("bandwidth and SNR must be positive");
    return bandwidth * std::log2(1.0 + snr_value);
}

/// alpha_i = 1 / C_i seconds per bit.
inline Vec airtime_weights(const Vec& capacities) {
    for (Eigen::Index i = 0; i < capacities.size(); ++i)
        if (!(capacities(i) > 0.0) || !std::isfinite(capacities(i)))
            throw InvalidArgument("capacities must be positive and finite");
    return capacities.cwiseInverse();
}

struct RateReport {
    Mat per_sensor_mi;  // T x M, bits
    Vec alpha;
    double weighted_total = 0.0;
    double sandwich_upper = 0.0;
    std::optional<Mat> empirical_lengths;  // T x M, bits

    static RateReport from_mi(Mat mi, Vec alpha) {
        RateReport r;
        r.weighted_total = horizon_cost(mi, alpha);
        r.sandwich_upper = r.weighted_total + kSandwichGap * alpha.sum();
        r.per_sensor_mi = std::move(mi);
        r.alpha = std::move(alpha);
        return r;
    }

    void write_csv(std::ostream& os) const {
        os << "t,sensor,mi_bits,empirical_bits\n";
        os.precision(17);
        for (Eigen::Index t = 0; t < per_sensor_mi.rows(); ++t)
            for (Eigen::Index i = 0; i < per_sensor_mi.cols(); ++i) {
                os << t + 1 << ',' << i << ',' << per_sensor_mi(t, i) << ',';
                if (empirical_lengths) os << (*empirical_lengths)(t, i);
                os << '\n';
            }
    }
};

}  // namespace ratealloc
