#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <queue>
#include <vector>

#include "ratealloc/errors.hpp"
#include "ratealloc/rng.hpp"

namespace ratealloc {

struct QuantizerConfig {
    double delta = 1.0;

    explicit QuantizerConfig(double d) : delta(d) {
        if (!(d > 0.0) || !std::isfinite(d))
            throw InvalidArgument("quantizer sensitivity must be positive and finite");
    }
};

// Cells are [k - 1/2, k + 1/2) * delta, so a tie goes to the upper cell.
inline std::int64_t quantize(double z, const QuantizerConfig& cfg, double xi) {
    return static_cast<std::int64_t>(std::floor((z + xi) / cfg.delta + 0.5));
}

inline double reconstruct(std::int64_t k, const QuantizerConfig& cfg, double xi) {
    return static_cast<double>(k) * cfg.delta - xi;
}

/// Per-sensor dither. xi(t) is a pure function of (base_seed, sensor_id, t),
/// so the sensor and the fusion center generate it independently.
class DitherStream {
public:
    DitherStream(std::uint64_t sensor_id, std::uint64_t base_seed)
        : rng_(CounterRng(base_seed).split(0xd1ce0000ULL + sensor_id)) {}

    double unit(std::uint64_t t) const noexcept { return rng_.uniform_at(t); }

    // Uniform on [-delta/2, delta/2).
    double at(std::uint64_t t, double delta) const noexcept { return (unit(t) - 0.5) * delta; }

private:
    CounterRng rng_;
};

/// Bit string, packed MSB-first.
struct Codeword {
    std::vector<std::uint8_t> bytes;
    std::size_t length = 0;

    bool bit(std::size_t i) const { return (bytes[i >> 3] >> (7 - (i & 7))) & 1u; }
    bool operator==(const Codeword&) const = default;
};

class BitWriter {
public:
    void put(bool b) {
        if ((cw_.length & 7) == 0) cw_.bytes.push_back(0);
        if (b) cw_.bytes.back() |= static_cast<std::uint8_t>(0x80u >> (cw_.length & 7));
        ++cw_.length;
    }

    void put_bits(std::uint64_t value, int count) {
        for (int i = count - 1; i >= 0; --i) put((value >> i) & 1u);
    }

    Codeword finish() { return std::move(cw_); }

private:
    Codeword cw_;
};

class BitReader {
public:
    explicit BitReader(const Codeword& cw) : cw_(cw) {}

    bool get() {
        if (pos_ >= cw_.length) throw DecodeError("codeword exhausted");
        return cw_.bit(pos_++);
    }

    std::uint64_t get_bits(int count) {
        std::uint64_t v = 0;
        for (int i = 0; i < count; ++i) v = (v << 1) | static_cast<std::uint64_t>(get());
        return v;
    }

    std::size_t position() const noexcept { return pos_; }
    bool done() const noexcept { return pos_ == cw_.length; }

private:
    const Codeword& cw_;
    std::size_t pos_ = 0;
};

inline std::uint64_t zigzag(std::int64_t k) {
    return k >= 0 ? 2 * static_cast<std::uint64_t>(k) : 2 * static_cast<std::uint64_t>(-(k + 1)) + 1;
}

inline std::int64_t unzigzag(std::uint64_t u) {
    return (u & 1u) ? -static_cast<std::int64_t>(u >> 1) - 1 : static_cast<std::int64_t>(u >> 1);
}

// Elias gamma for N >= 1.
inline void put_gamma(BitWriter& w, std::uint64_t N) {
    const int nbits = std::bit_width(N);
    for (int i = 1; i < nbits; ++i) w.put(false);
    w.put_bits(N, nbits);
}

inline std::uint64_t get_gamma(BitReader& r) {
    int zeros = 0;
    while (!r.get()) {
        if (++zeros > 62) throw DecodeError("corrupt escape payload");
    }
    return (std::uint64_t{1} << zeros) | r.get_bits(zeros);
}

namespace detail {

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// P(a <= N(0,1) < b), accurate in both tails.
inline double norm_interval(double a, double b) {
    if (a > 0.0) return 0.5 * (std::erfc(a / std::numbers::sqrt2) - std::erfc(b / std::numbers::sqrt2));
    return norm_cdf(b) - norm_cdf(a);
}

// Huffman code lengths with a deterministic tie-break on symbol order.
inline std::vector<std::uint8_t> huffman_lengths(const std::vector<double>& p) {
    const std::size_t n = p.size();
    std::vector<std::uint8_t> len(n, 0);
    if (n == 1) {
        len[0] = 1;
        return len;
    }
    struct Node {
        double w;
        std::size_t order;
        int id;
    };
    auto worse = [](const Node& a, const Node& b) {
        return a.w != b.w ? a.w > b.w : a.order > b.order;
    };
    std::priority_queue<Node, std::vector<Node>, decltype(worse)> pq(worse);
    std::vector<int> parent(2 * n - 1, -1);
    for (std::size_t i = 0; i < n; ++i) pq.push({p[i], i, static_cast<int>(i)});
    int next = static_cast<int>(n);
    std::size_t order = n;
    while (pq.size() > 1) {
        Node a = pq.top();
        pq.pop();
        Node b = pq.top();
        pq.pop();
        parent[a.id] = next;
        parent[b.id] = next;
        pq.push({a.w + b.w, order++, next++});
    }
    for (std::size_t i = 0; i < n; ++i) {
        int d = 0;
        for (int v = static_cast<int>(i); parent[v] >= 0; v = parent[v]) ++d;
        if (d > 64) throw NumericalFailure("Huffman code length exceeds 64 bits");
        len[i] = static_cast<std::uint8_t>(d);
    }
    return len;
}

}  // namespace detail

/// Discretized-Gaussian model for the quantizer index of theta + xi with
/// theta ~ N(0, sigma^2), and its canonical Huffman code. A fresh model is
/// built per step and sensor; encoder and decoder build identical ones.
///
/// Symbols cover +-8 sigma plus an escape. Escaped indices follow as a
/// zigzag Elias-gamma payload. For wide pmfs the index is split into a
/// coded high part and s raw low bits.
class GaussianSymbolModel {
public:
    static constexpr double kWidth = 8.0;
    static constexpr double kMaxCoarseRatio = 16.0;
    static constexpr double kFloor = 1e-12;

    GaussianSymbolModel(double sigma, const QuantizerConfig& cfg, double xi)
        : sigma_(sigma), delta_(cfg.delta), xi_(xi) {
        if (!(sigma >= 0.0) || !std::isfinite(sigma))
            throw InvalidArgument("innovation standard deviation must be finite and >= 0");
        const double ratio = sigma / delta_;
        if (ratio < 1e-9) {
            lo_ = quantize(0.0, cfg, xi);
            probs_.assign(1, 1.0);
        } else {
            while (ratio / std::ldexp(1.0, shift_) > kMaxCoarseRatio) ++shift_;
            const auto klo = static_cast<std::int64_t>(std::floor((-kWidth * sigma + xi) / delta_));
            const auto khi = static_cast<std::int64_t>(std::ceil((kWidth * sigma + xi) / delta_));
            lo_ = klo >> shift_;
            const std::int64_t hi = khi >> shift_;
            const std::int64_t span = std::int64_t{1} << shift_;
            probs_.resize(static_cast<std::size_t>(hi - lo_ + 1));
            for (std::int64_t j = lo_; j <= hi; ++j) {
                const double a = ((static_cast<double>(j * span) - 0.5) * delta_ - xi) / sigma;
                const double b = ((static_cast<double>(j * span + span) - 0.5) * delta_ - xi) / sigma;
                probs_[static_cast<std::size_t>(j - lo_)] = detail::norm_interval(a, b);
            }
        }
        double inside = 0.0;
        for (double p : probs_) inside += p;
        std::vector<double> w(probs_.size() + 1);
        for (std::size_t i = 0; i < probs_.size(); ++i) w[i] = probs_[i] + kFloor;
        w.back() = std::max(0.0, 1.0 - inside) + kFloor;
        build_code(w);
    }

    int shift() const noexcept { return shift_; }
    std::size_t symbols() const noexcept { return probs_.size() + 1; }
    int code_length(std::size_t sym) const { return len_.at(sym); }

    Codeword encode(std::int64_t k) const {
        BitWriter w;
        encode_into(w, k);
        return w.finish();
    }

    void encode_into(BitWriter& w, std::int64_t k) const {
        const std::int64_t j = k >> shift_;
        const std::int64_t rel = j - lo_;
        if (rel >= 0 && rel < static_cast<std::int64_t>(probs_.size())) {
            const auto sym = static_cast<std::size_t>(rel);
            w.put_bits(code_[sym], len_[sym]);
            w.put_bits(static_cast<std::uint64_t>(k - (j << shift_)), shift_);
            return;
        }
        if (k > (std::int64_t{1} << 60) || k < -(std::int64_t{1} << 60))
            throw InvalidArgument("quantizer index out of codable range");
        const std::size_t esc = probs_.size();
        w.put_bits(code_[esc], len_[esc]);
        put_gamma(w, zigzag(k) + 1);
    }

    std::int64_t decode(const Codeword& cw) const {
        BitReader r(cw);
        const std::int64_t k = decode_from(r);
        if (!r.done()) throw DecodeError("trailing bits after codeword");
        return k;
    }

    std::int64_t decode_from(BitReader& r) const {
        std::uint64_t code = 0;
        for (int l = 1; l <= max_len_; ++l) {
            code = (code << 1) | static_cast<std::uint64_t>(r.get());
            const auto c = static_cast<std::size_t>(l);
            if (count_[c] > 0 && code >= first_code_[c] && code - first_code_[c] < count_[c]) {
                const std::size_t sym = sorted_[first_index_[c] + (code - first_code_[c])];
                if (sym == probs_.size()) return unzigzag(get_gamma(r) - 1);
                const std::int64_t j = lo_ + static_cast<std::int64_t>(sym);
                return (j << shift_) + static_cast<std::int64_t>(r.get_bits(shift_));
            }
        }
        throw DecodeError("corrupt codeword");
    }

    /// Entropy (bits) of the index pmf, summed directly at full resolution.
    double entropy_bits() const {
        if (sigma_ / delta_ < 1e-9) return 0.0;
        const auto klo = static_cast<std::int64_t>(std::floor((-(kWidth + 2) * sigma_ + xi_) / delta_));
        const auto khi = static_cast<std::int64_t>(std::ceil(((kWidth + 2) * sigma_ + xi_) / delta_));
        double h = 0.0;
        for (std::int64_t k = klo; k <= khi; ++k) {
            const double p = detail::norm_interval(((static_cast<double>(k) - 0.5) * delta_ - xi_) / sigma_,
                                                   ((static_cast<double>(k) + 0.5) * delta_ - xi_) / sigma_);
            if (p > 0.0) h -= p * std::log2(p);
        }
        return h;
    }

    /// Expected codeword length (bits) under the model, escapes excluded.
    double expected_length() const {
        double e = 0.0;
        for (std::size_t i = 0; i < probs_.size(); ++i) e += probs_[i] * (len_[i] + shift_);
        return e;
    }

private:
    void build_code(const std::vector<double>& w) {
        len_ = detail::huffman_lengths(w);
        const std::size_t n = w.size();
        sorted_.resize(n);
        for (std::size_t i = 0; i < n; ++i) sorted_[i] = i;
        std::stable_sort(sorted_.begin(), sorted_.end(),
                         [&](std::size_t a, std::size_t b) { return len_[a] < len_[b]; });
        max_len_ = len_[sorted_.back()];
        code_.assign(n, 0);
        std::uint64_t code = 0;
        int prev = len_[sorted_[0]];
        for (std::size_t r = 0; r < n; ++r) {
            const std::size_t s = sorted_[r];
            code <<= (len_[s] - prev);
            prev = len_[s];
            code_[s] = code;
            if (count_[len_[s]]++ == 0) {
                first_code_[len_[s]] = code;
                first_index_[len_[s]] = r;
            }
            ++code;
        }
    }

    double sigma_, delta_, xi_;
    int shift_ = 0;
    std::int64_t lo_ = 0;
    std::vector<double> probs_;
    std::vector<std::uint8_t> len_;
    std::vector<std::uint64_t> code_;
    std::vector<std::size_t> sorted_;
    std::array<std::uint64_t, 65> first_code_{};
    std::array<std::size_t, 65> first_index_{};
    std::array<std::uint64_t, 65> count_{};
    int max_len_ = 0;
};

struct InnovationCode {
    Codeword code;
    std::int64_t k = 0;
    double eta = 0.0;  // reconstruction of the innovation
};

/// Sensor side: innovation theta = y - y_pred, quantize, code under
/// N(0, innovation_var).
inline InnovationCode encode_innovation(double y, double y_pred, double innovation_var,
                                        const QuantizerConfig& cfg, double xi) {
    const double theta = y - y_pred;
    InnovationCode out;
    out.k = quantize(theta, cfg, xi);
    out.eta = reconstruct(out.k, cfg, xi);
    out.code = GaussianSymbolModel(std::sqrt(std::max(0.0, innovation_var)), cfg, xi).encode(out.k);
    return out;
}

/// Fusion-center side; returns the innovation reconstruction.
inline double decode_innovation(const Codeword& cw, double innovation_var,
                                const QuantizerConfig& cfg, double xi) {
    const auto k = GaussianSymbolModel(std::sqrt(std::max(0.0, innovation_var)), cfg, xi).decode(cw);
    return reconstruct(k, cfg, xi);
}

// Frame layout: uint32 t, uint32 sensor, uint32 bit length (all little
// endian), then ceil(bits / 8) bytes packed MSB-first.
struct Frame {
    std::uint32_t t = 0;
    std::uint32_t sensor = 0;
    Codeword code;
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(b, 4);
}

inline bool get_u32(std::istream& is, std::uint32_t& v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    v = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    return true;
}

}  // namespace detail

inline void write_frame(std::ostream& os, const Frame& f) {
    if (f.code.length > std::numeric_limits<std::uint32_t>::max())
        throw InvalidArgument("codeword too long for frame");
    detail::put_u32(os, f.t);
    detail::put_u32(os, f.sensor);
    detail::put_u32(os, static_cast<std::uint32_t>(f.code.length));
    os.write(reinterpret_cast<const char*>(f.code.bytes.data()),
             static_cast<std::streamsize>((f.code.length + 7) / 8));
}

/// Returns false on clean end of stream; throws DecodeError on truncation.
inline bool read_frame(std::istream& is, Frame& f) {
    std::uint32_t bits = 0;
    if (!detail::get_u32(is, f.t)) return false;
    if (!detail::get_u32(is, f.sensor) || !detail::get_u32(is, bits))
        throw DecodeError("truncated frame header");
    f.code.length = bits;
    f.code.bytes.assign((bits + 7) / 8, 0);
    if (!is.read(reinterpret_cast<char*>(f.code.bytes.data()),
                 static_cast<std::streamsize>(f.code.bytes.size())))
        throw DecodeError("truncated frame payload");
    return true;
}

}  // namespace ratealloc
