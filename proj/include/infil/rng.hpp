#pragma once

#include <cstdint>

namespace infil {

// SplitMix64 stream generator. The update and mixing constants below fully
// specify the sequence, so a reimplementation in any language reproduces
// identical streams for a given seed. All randomness in this project
// (parameter init, phantom noise, patch sampling, augmentation draws) comes
// from this generator so fixtures are bit-reproducible across platforms.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1) with 53 mantissa bits: (next_u64() >> 11) * 2^-53.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0,n), n > 0, by modulo reduction. The bias is
    // negligible for the fixture sizes used here and the mapping is trivial
    // to reproduce elsewhere.
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    bool coin() { return (next_u64() & 1ull) != 0; }

    // Approximately standard-normal deviate via Irwin-Hall: sum of 12
    // uniforms minus 6. Uses only additions so the stream stays bit-exact
    // across libm implementations; plenty for phantom noise.
    double normal() {
        double s = 0.0;
        for (int i = 0; i < 12; ++i) s += next_double();
        return s - 6.0;
    }

private:
    std::uint64_t state_;
};

}  // namespace infil
