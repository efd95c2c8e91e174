#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "rudra/errors.hpp"

namespace rudra {

/// Deterministic, platform-stable random stream.
///
/// The generator is splitmix64 (Steele, Lea, Flood 2014): a 64-bit counter
/// advanced by the golden-ratio increment 0x9e3779b97f4a7c15, finalized by
/// the Stafford mix13 constants 0xbf58476d1ce4e5b9 / 0x94d049bb133111eb.
/// Everything is integer arithmetic on fixed-width types, so identical
/// (seed, stream_id) pairs reproduce identical sequences on every platform.
///
/// Distinct stream_ids under the same seed give statistically independent
/// streams: the initial state mixes both words through the finalizer.
class RngStream {
public:
    RngStream() : RngStream(0, 0) {}

    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : seed_(seed), stream_id_(stream_id) {
        state_ = mix(seed + 0x9e3779b97f4a7c15ULL);
        state_ = mix(state_ ^ mix(stream_id + 0xbf58476d1ce4e5b9ULL));
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    /// Uniform double in [0, 1), 53-bit resolution.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in (0, 1]; safe as a log() argument.
    double next_double_open() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    /// Uniform integer in [0, bound). Bounded rejection sampling, so the
    /// result is exactly uniform and platform-stable.
    std::uint64_t next_below(std::uint64_t bound) {
        if (bound == 0) throw PreconditionError("next_below: bound must be positive");
        const std::uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    /// One standard-normal draw via Box-Muller. Each call consumes two
    /// uniforms and discards the paired variate, so the stream position is a
    /// pure function of the call count.
    double next_gaussian() {
        const double u1 = next_double_open();
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    double next_gaussian(double mean, double std) {
        return mean + std * next_gaussian();
    }

    /// Exponential with the given mean (inverse-CDF transform).
    double next_exponential(double mean) {
        return -mean * std::log(next_double_open());
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_ = 0;
    std::uint64_t stream_id_ = 0;
    std::uint64_t state_ = 0;
};

/// n Gaussian draws with the given mean and standard deviation.
/// std = 0 degenerates to a constant vector.
inline std::vector<double> draw_gaussian(RngStream& rng, std::size_t n,
                                         double mean, double std) {
    if (std < 0.0) throw PreconditionError("draw_gaussian: std must be >= 0");
    std::vector<double> out(n);
    for (auto& v : out) v = rng.next_gaussian(mean, std);
    return out;
}

/// Well-known stream ids, so every consumer of randomness in a run derives
/// from the single run seed without collisions.
namespace streams {
inline constexpr std::uint64_t kWeightInit = 0x01;
inline constexpr std::uint64_t kDatasetTrain = 0x02;
inline constexpr std::uint64_t kDatasetTest = 0x03;
inline constexpr std::uint64_t kSharedSampler = 0x04;

inline constexpr std::uint64_t learner_data(std::uint64_t learner_id) {
    return (0x10ULL << 32) | learner_id;
}
inline constexpr std::uint64_t learner_compute(std::uint64_t learner_id) {
    return (0x11ULL << 32) | learner_id;
}
inline constexpr std::uint64_t link_latency(std::uint64_t edge_index) {
    return (0x12ULL << 32) | edge_index;
}
}  // namespace streams

}  // namespace rudra
