#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace ratealloc {

// SplitMix64 finalizer. Used as a keyed hash so any (key, counter) pair maps
// to an independent-looking 64-bit word.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Counter-based generator: the n-th draw of a stream is a pure function of
/// (key, n). Substreams are derived by hashing an id into the key, so the
/// encoder and the decoder can regenerate the same numbers independently.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t key) noexcept : key_(mix64(key)) {}

    CounterRng split(std::uint64_t stream_id) const noexcept {
        CounterRng child(0);
        child.key_ = mix64(key_ ^ mix64(stream_id + 0x632be59bd9b4e019ULL));
        return child;
    }

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }
    void seek(std::uint64_t counter) noexcept { counter_ = counter; }

    std::uint64_t at(std::uint64_t n) const noexcept {
        return mix64(key_ + mix64(n ^ 0xd1b54a32d192ed03ULL));
    }

    std::uint64_t next_u64() noexcept { return at(counter_++); }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return to_unit(next_u64()); }

    double uniform_at(std::uint64_t n) const noexcept { return to_unit(at(n)); }

    // Standard normal via Box-Muller; consumes two counters per call.
    double normal() noexcept {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    static constexpr double to_unit(std::uint64_t w) noexcept {
        return static_cast<double>(w >> 11) * 0x1.0p-53;
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace ratealloc
