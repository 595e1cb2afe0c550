#pragma once

#include <cstdint>

namespace cmx {

/// Counter-based deterministic generator (SplitMix64 finalizer over seed+counter).
/// The same seed yields the same sequence on every platform; draws never depend
/// on libc or libstdc++ distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() {
        std::uint64_t z = seed_ + (++counter_) * k_gamma;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1), 53 mantissa bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    float uniform(float lo, float hi) {
        return lo + static_cast<float>(next_double()) * (hi - lo);
    }

    /// Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(next_double() * static_cast<double>(n));
    }

    /// Independent child stream; deterministic in (seed, stream).
    Rng split(std::uint64_t stream) const {
        std::uint64_t z = seed_ ^ (0x9E3779B97F4A7C15ULL + stream * 0xD1B54A32D192ED03ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return Rng(z ^ (z >> 31));
    }

private:
    static constexpr std::uint64_t k_gamma = 0x9E3779B97F4A7C15ULL;

    std::uint64_t seed_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace cmx
