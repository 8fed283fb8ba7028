#pragma once

/// @file
/// Counter-based random streams.
///
/// Every draw is a pure function of (seed, stream, counter):
///
///     key   = mix64(seed ^ mix64(stream + 0x632BE59BD9B4E019))
///     word  = mix64(key + (counter + 1) * 0x9E3779B97F4A7C15)
///
/// where mix64 is the SplitMix64 finalizer. Uniforms take the top 53 bits,
/// offset by half a unit so they lie strictly inside (0, 1). Normals use the
/// Box-Muller transform on two consecutive uniforms. Because nothing depends on
/// library-specific distribution code, identical seeds give identical streams
/// on every platform whose libm agrees on log/cos/sin/sqrt.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace volnet {

constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
        : key_(mix64(seed ^ mix64(stream + 0x632BE59BD9B4E019ULL)))
    {
    }

    /// Independent substream; children of one parent never overlap.
    CounterRng substream(std::uint64_t id) const noexcept
    {
        CounterRng child(0);
        child.key_ = mix64(key_ ^ mix64(id * 0xD1B54A32D192ED03ULL + 1));
        return child;
    }

    std::uint64_t next_u64() noexcept { return mix64(key_ + (++counter_) * 0x9E3779B97F4A7C15ULL); }

    /// Uniform in the open interval (0, 1).
    double uniform() noexcept { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept
    {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    double normal() noexcept
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace volnet
