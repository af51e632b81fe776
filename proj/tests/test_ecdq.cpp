#include <gtest/gtest.h>

#include <sstream>

#include "ratealloc/ecdq.hpp"

using namespace ratealloc;

TEST(Quantize, CellConvention) {
    QuantizerConfig unit(1.0);
    EXPECT_EQ(quantize(0.49, unit, 0.0), 0);
    EXPECT_EQ(quantize(0.5, unit, 0.0), 1);
    EXPECT_EQ(quantize(-0.5, unit, 0.0), 0);
    QuantizerConfig fine(0.2);
    EXPECT_EQ(quantize(-0.31, fine, 0.0), -2);
    EXPECT_NEAR(reconstruct(-2, fine, 0.0), -0.4, 1e-15);
    EXPECT_EQ(reconstruct(3, unit, 0.0), 3.0);
    EXPECT_THROW(QuantizerConfig(0.0), InvalidArgument);
    EXPECT_THROW(QuantizerConfig(std::nan("")), InvalidArgument);
}

TEST(Quantize, ErrorIsBounded) {
    CounterRng rng(1);
    for (int i = 0; i < 10000; ++i) {
        const double delta = 0.01 + 3.0 * rng.uniform();
        QuantizerConfig cfg(delta);
        const double z = 100.0 * (rng.uniform() - 0.5);
        const double xi = (rng.uniform() - 0.5) * delta;
        EXPECT_LE(std::abs(reconstruct(quantize(z, cfg, xi), cfg, xi) - z), delta / 2 + 1e-12);
    }
}

TEST(Quantize, DitheredErrorIsUniformAndUncorrelated) {
    const int N = 1000000, bins = 20;
    const double delta = 0.7;
    QuantizerConfig cfg(delta);
    DitherStream dither(3, 99);
    CounterRng src(5);
    std::vector<int> hist(bins, 0);
    double sz = 0, se = 0, sze = 0, szz = 0, see = 0;
    for (int t = 0; t < N; ++t) {
        const double z = 2.0 * src.normal();
        const double xi = dither.at(t, delta);
        const double e = reconstruct(quantize(z, cfg, xi), cfg, xi) - z;
        ASSERT_GE(e, -delta / 2 - 1e-12);
        ASSERT_LT(e, delta / 2 + 1e-12);
        int b = static_cast<int>((e / delta + 0.5) * bins);
        hist[std::clamp(b, 0, bins - 1)]++;
        sz += z, se += e, sze += z * e, szz += z * z, see += e * e;
    }
    double chi2 = 0;
    const double expected = double(N) / bins;
    for (int h : hist) chi2 += (h - expected) * (h - expected) / expected;
    EXPECT_LT(chi2, 36.19);  // chi-square 19 dof, 1% level
    const double mz = sz / N, me = se / N;
    const double corr = (sze / N - mz * me) / std::sqrt((szz / N - mz * mz) * (see / N - me * me));
    EXPECT_LT(std::abs(corr), 3.0 / std::sqrt(double(N)));
    EXPECT_NEAR(see / N, delta * delta / 12.0, 3e-3 * delta * delta);
}

TEST(Dither, SharedStreamsAreIdentical) {
    DitherStream enc(7, 1234), dec(7, 1234), other(8, 1234);
    int same_other = 0;
    for (std::uint64_t t = 0; t < 1000; ++t) {
        EXPECT_EQ(enc.at(t, 0.3), dec.at(t, 0.3));
        same_other += enc.at(t, 0.3) == other.at(t, 0.3);
    }
    EXPECT_EQ(same_other, 0);
}

TEST(Bits, GammaAndZigzagRoundTrip) {
    for (std::int64_t k : {0LL, 1LL, -1LL, 2LL, -1000000LL, 123456789LL}) EXPECT_EQ(unzigzag(zigzag(k)), k);
    BitWriter w;
    for (std::uint64_t n = 1; n < 300; ++n) put_gamma(w, n);
    auto cw = w.finish();
    BitReader r(cw);
    for (std::uint64_t n = 1; n < 300; ++n) EXPECT_EQ(get_gamma(r), n);
    EXPECT_TRUE(r.done());
}

TEST(Codec, LosslessOverWideRange) {
    CounterRng rng(17);
    GaussianSymbolModel model(3.0, QuantizerConfig(1.0), 0.2);
    for (int i = 0; i < 20000; ++i) {
        const auto k = static_cast<std::int64_t>(std::floor(2e6 * rng.uniform())) - 1000000;
        ASSERT_EQ(model.decode(model.encode(k)), k);
    }
    for (std::int64_t k = -40; k <= 40; ++k) ASSERT_EQ(model.decode(model.encode(k)), k);
}

TEST(Codec, CoarseSplitRoundTrip) {
    GaussianSymbolModel model(5000.0, QuantizerConfig(1.0), -0.3);
    EXPECT_GT(model.shift(), 0);
    CounterRng rng(2);
    for (int i = 0; i < 5000; ++i) {
        const auto k = static_cast<std::int64_t>(std::llround(5000.0 * rng.normal()));
        ASSERT_EQ(model.decode(model.encode(k)), k);
    }
}

TEST(Codec, DegenerateModelUsesOneBit) {
    GaussianSymbolModel model(0.0, QuantizerConfig(1.0), 0.1);
    auto cw = model.encode(0);
    EXPECT_EQ(cw.length, 1u);
    EXPECT_EQ(model.decode(cw), 0);
    EXPECT_EQ(model.decode(model.encode(5)), 5);
}

TEST(Codec, CorruptOrTruncatedFails) {
    GaussianSymbolModel model(4.0, QuantizerConfig(1.0), 0.0);
    auto cw = model.encode(1000);  // escape with gamma payload
    Codeword cut = cw;
    cut.length -= 3;
    EXPECT_THROW(model.decode(cut), DecodeError);
    Codeword longer = model.encode(0);
    longer.bytes.push_back(0);
    longer.length += 4;
    EXPECT_THROW(model.decode(longer), DecodeError);
    EXPECT_THROW(model.decode(Codeword{}), DecodeError);
}

TEST(Codec, LengthTracksEntropyAtSigmaOverDeltaFour) {
    const int N = 100000;
    const double delta = 1.0, sigma = 4.0;
    QuantizerConfig cfg(delta);
    CounterRng rng(31);
    DitherStream dither(0, 8);
    double bits = 0, entropy = 0;
    for (int t = 0; t < N; ++t) {
        const double xi = dither.at(t, delta);
        GaussianSymbolModel model(sigma, cfg, xi);
        const auto k = quantize(sigma * rng.normal(), cfg, xi);
        bits += static_cast<double>(model.encode(k).length);
        entropy += model.entropy_bits();
    }
    EXPECT_NEAR(entropy / N, std::log2(sigma / delta * std::sqrt(2 * std::numbers::pi * std::numbers::e)), 0.01);
    EXPECT_LE(std::abs(bits / N - entropy / N), 0.1);
}

TEST(Innovation, ZeroInnovationZeroDither) {
    auto c = encode_innovation(2.5, 2.5, 1.0, QuantizerConfig(0.5), 0.0);
    EXPECT_EQ(c.k, 0);
    EXPECT_EQ(c.eta, 0.0);
}

TEST(Innovation, DecoderReproducesEtaBitExactly) {
    CounterRng rng(4);
    DitherStream sensor(2, 77), center(2, 77);
    for (std::uint64_t t = 0; t < 2000; ++t) {
        const double delta = 0.05 + rng.uniform();
        const double var = 0.01 + 4.0 * rng.uniform();
        const double y = 3.0 * rng.normal(), y_pred = y + std::sqrt(var) * rng.normal();
        auto enc = encode_innovation(y, y_pred, var, QuantizerConfig(delta), sensor.at(t, delta));
        const double eta = decode_innovation(enc.code, var, QuantizerConfig(delta), center.at(t, delta));
        ASSERT_EQ(eta, enc.eta);
    }
}

TEST(Frame, RoundTripAndTruncation) {
    GaussianSymbolModel model(2.0, QuantizerConfig(1.0), 0.0);
    std::stringstream ss;
    std::vector<Frame> frames;
    for (std::uint32_t t = 0; t < 50; ++t)
        frames.push_back({t, t % 3, model.encode(static_cast<std::int64_t>(t) - 25)});
    for (const auto& f : frames) write_frame(ss, f);
    const std::string blob = ss.str();
    EXPECT_EQ(static_cast<unsigned char>(blob[0]), 0u);
    EXPECT_EQ(static_cast<unsigned char>(blob[12 + (frames[0].code.length + 7) / 8]), 1u);
    std::stringstream in(blob);
    Frame f;
    for (const auto& expect : frames) {
        ASSERT_TRUE(read_frame(in, f));
        EXPECT_EQ(f.t, expect.t);
        EXPECT_EQ(f.sensor, expect.sensor);
        EXPECT_EQ(f.code, expect.code);
        EXPECT_EQ(model.decode(f.code), static_cast<std::int64_t>(f.t) - 25);
    }
    EXPECT_FALSE(read_frame(in, f));
    std::stringstream cut(blob.substr(0, blob.size() - 1));
    auto read_all = [&] {
        while (read_frame(cut, f)) {
        }
    };
    EXPECT_THROW(read_all(), DecodeError);
}
