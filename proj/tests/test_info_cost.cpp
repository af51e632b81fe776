#include <gtest/gtest.h>

#include <sstream>

#include "ratealloc/info_cost.hpp"
#include "ratealloc/rng.hpp"

using namespace ratealloc;

TEST(SensorMi, Examples) {
    EXPECT_DOUBLE_EQ(sensor_mi(Mat::Ones(1, 1), Eigen::RowVectorXd::Ones(1), 1.0), 0.5);
    EXPECT_LT(sensor_mi(Mat::Ones(1, 1), Eigen::RowVectorXd::Ones(1), 1e12), 1e-11);
    EXPECT_EQ(sensor_mi(Mat::Ones(1, 1), Eigen::RowVectorXd::Ones(1), kInf), 0.0);
    Mat P = Eigen::Vector2d(2, 3).asDiagonal();
    EXPECT_NEAR(sensor_mi(P, Eigen::RowVector2d(1, 1), 2.0), 0.5 * std::log2(3.5), 1e-15);
    EXPECT_NEAR(sensor_mi(P, Eigen::RowVector2d(1, 1), 2.0), 0.9037, 1e-4);
    EXPECT_THROW(sensor_mi(P, Eigen::RowVector2d(1, 1), 0.0), InvalidArgument);
}

TEST(SensorMi, EqualsLogDetForm) {
    CounterRng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        Mat B(3, 3);
        for (int i = 0; i < 9; ++i) B(i / 3, i % 3) = rng.normal();
        Mat P = B * B.transpose() + 0.1 * Mat::Identity(3, 3);
        Eigen::RowVectorXd c(3);
        for (int i = 0; i < 3; ++i) c(i) = rng.normal();
        const double V = 0.05 + rng.uniform();
        Mat post = (P.inverse() + c.transpose() * c / V).inverse();
        const double direct = 0.5 * std::log2(P.determinant()) - 0.5 * std::log2(post.determinant());
        EXPECT_NEAR(sensor_mi(P, c, V), direct, 1e-9);
    }
}

TEST(SensorMi, MonotoneInNoiseAndPrior) {
    CounterRng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        Mat B = Mat::Random(2, 2);
        Mat P = B * B.transpose() + 0.1 * Mat::Identity(2, 2);
        Mat Pbig = P + 0.3 * Mat::Identity(2, 2);
        Eigen::RowVector2d c(rng.normal(), rng.normal());
        const double V = 0.1 + rng.uniform();
        EXPECT_GT(sensor_mi(P, c, V), sensor_mi(P, c, 1.5 * V));
        EXPECT_GT(sensor_mi(Pbig, c, V), sensor_mi(P, c, V));
    }
}

TEST(HorizonCost, Examples) {
    EXPECT_EQ(horizon_cost(Mat::Zero(3, 2), Vec::Ones(2)), 0.0);
    Mat mi(1, 2);
    mi << 0.5, 1.0;
    EXPECT_DOUBLE_EQ(horizon_cost(mi, Eigen::Vector2d(1, 2)), 2.5);
    Mat mi2(2, 2);
    mi2 << 0.5, 1.0, 1.5, 0.0;
    EXPECT_DOUBLE_EQ(horizon_cost(mi2, Eigen::Vector2d(1, 2)), 2.0);
}

TEST(Airtime, Weights) {
    EXPECT_DOUBLE_EQ(capacity(1e6, 3.0), 2e6);
    EXPECT_DOUBLE_EQ(airtime_weights(Vec::Constant(1, 2e6))(0), 5e-7);
    const double near = snr(10.0, 1.0, 1e6, 1e-12), far = snr(20.0, 1.0, 1e6, 1e-12);
    EXPECT_DOUBLE_EQ(near, 4.0 * far);
    Vec w = airtime_weights(Eigen::Vector3d(capacity(1e6, near), capacity(1e6, far), capacity(1e6, near)));
    EXPECT_EQ(w(0), w(2));
    EXPECT_NEAR(w(1) / w(0), std::log2(1 + near) / std::log2(1 + far), 1e-12);
    EXPECT_THROW(airtime_weights(Eigen::Vector2d(1.0, 0.0)), InvalidArgument);
    EXPECT_THROW(snr(0.0, 1.0, 1.0, 1.0), InvalidArgument);
}

TEST(RateReport, SandwichAndCsv) {
    Mat mi(2, 2);
    mi << 0.5, 0.25, 0.0, 1.0;
    auto r = RateReport::from_mi(mi, Eigen::Vector2d(1, 1));
    EXPECT_NEAR(kSandwichGap, 1.254, 1e-3);  // exact 1.25461, quoted truncated
    EXPECT_DOUBLE_EQ(r.weighted_total, 0.875);
    EXPECT_DOUBLE_EQ(r.sandwich_upper, 0.875 + 2 * kSandwichGap);
    std::ostringstream os;
    r.write_csv(os);
    EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "t,sensor,mi_bits,empirical_bits");
    EXPECT_NE(os.str().find("2,1,1,\n"), std::string::npos);
}
