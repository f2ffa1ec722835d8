#pragma once

#include <cmath>
#include <cstdint>

namespace metadepth {

/// Counter-based random stream. A stream is fully described by
/// (seed, stream_id, counter), so it can be copied, replayed, and forked
/// without hidden state. Disjoint stream ids give independent sequences.
///
/// The generator is the splitmix64 finalizer applied to a per-stream base
/// plus a Weyl-incremented counter. Output is identical on every platform.
class RngStream {
public:
    RngStream() = default;
    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : seed_(seed), stream_id_(stream_id), counter_(0),
          base_(mix64(seed + 0x9E3779B97F4A7C15ull) ^ mix64(stream_id * 0xBF58476D1CE4E5B9ull + 1)) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64() {
        return mix64(base_ + (counter_++) * 0x9E3779B97F4A7C15ull);
    }

    /// Uniform in [0, 1), 53-bit resolution.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Uniform integer in [0, n). Modulo bias is below 2^-53 for the n used
    /// here (dataset sizes, channel counts).
    std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

    bool bernoulli(double p) { return next_double() < p; }

    /// Standard normal via Box-Muller; consumes two draws per call so the
    /// counter advances identically regardless of how results are used.
    double normal() {
        double u1 = next_double();
        double u2 = next_double();
        // avoid log(0)
        u1 = u1 > 0.0 ? u1 : 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double two_pi = 6.283185307179586476925286766559;
        return r * std::cos(two_pi * u2);
    }

    /// Beta(0.5, 0.5) (arcsine law) by CDF inversion: x = sin^2(pi/2 * u).
    double beta_half_half() {
        const double half_pi = 1.5707963267948966192313216916398;
        const double s = std::sin(half_pi * next_double());
        return s * s;
    }

    /// Derives an independent stream; forked streams with distinct tags are
    /// disjoint from the parent and from each other.
    RngStream fork(std::uint64_t tag) const {
        return RngStream(mix64(base_ ^ (tag * 0x94D049BB133111EBull + 0x632BE59BD9B4E019ull)), tag);
    }

private:
    static std::uint64_t mix64(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ull;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBull;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t seed_ = 0;
    std::uint64_t stream_id_ = 0;
    std::uint64_t counter_ = 0;
    std::uint64_t base_ = 0;
};

}  // namespace metadepth
