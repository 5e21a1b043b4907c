#pragma once

// Counter-based pseudo-random streams. A stream is identified by
// (seed, stream_id); the i-th output is a strong 64-bit mix of the derived
// key and the counter, so distinct stream ids give statistically independent
// substreams and any (repetition, stratum) pair can be mapped to its own
// stream deterministically.

#include <cstdint>

#include "numerics.hpp"

namespace stratmc {

namespace detail {

inline uint64_t mix64(uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline uint64_t combine64(uint64_t a, uint64_t b) {
    return mix64(a ^ (mix64(b) + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2)));
}

} // namespace detail

// Hash-chain a list of tags into a substream id.
inline uint64_t derive_stream(uint64_t a) { return detail::mix64(a); }

template <typename... Rest>
uint64_t derive_stream(uint64_t a, uint64_t b, Rest... rest) {
    return derive_stream(detail::combine64(a, b), rest...);
}

class RngStream {
public:
    RngStream() : RngStream(0, 0) {}
    RngStream(uint64_t seed, uint64_t stream_id)
        : seed_(seed), stream_id_(stream_id),
          key_(detail::combine64(detail::mix64(seed), detail::mix64(stream_id))),
          counter_(0) {}

    uint64_t seed() const { return seed_; }
    uint64_t stream_id() const { return stream_id_; }

    uint64_t next_u64() {
        uint64_t z = key_ + counter_ * 0x9E3779B97F4A7C15ULL;
        ++counter_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // uniform on the open interval (0,1); never returns an endpoint
    double next_open01() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double a, double b) { return a + (b - a) * next_open01(); }

    // inverse-cdf transform, so stratified and plain sampling share one path
    double normal() { return std_normal_quantile(next_open01()); }

    uint64_t below(uint64_t n) {
        // multiply-shift rejection-free bound; bias < 2^-64, irrelevant here
        return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

private:
    uint64_t seed_;
    uint64_t stream_id_;
    uint64_t key_;
    uint64_t counter_;
};

} // namespace stratmc
