#pragma once

#include <cmath>
#include <cstdint>

namespace tnmera {

// splitmix64 (Steele, Lea, Flood 2014). Used for seed expansion and stream splitting.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// xoshiro256++ (Blackman, Vigna 2019), state seeded via splitmix64.
//
// Streams: split(k) derives an independent child generator as a pure function of
// (parent seed, k), regardless of how many numbers the parent has produced. That
// makes per-site / per-sample streams reproducible under any evaluation order.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {
        std::uint64_t sm = seed;
        for (auto& w : state_) w = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform on [0,1), 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; second variate cached.
    double gaussian() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        const double u1 = 1.0 - uniform(); // (0,1], log-safe
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(theta);
        have_cached_ = true;
        return r * std::cos(theta);
    }

    double gaussian(double stddev) { return stddev * gaussian(); }

    // Uniform integer in [0, n), n >= 1. Rejection-free modulo is fine here: n is
    // tiny compared to 2^64 so the bias is < 2^-50.
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    Rng split(std::uint64_t stream) const {
        std::uint64_t sm = seed_ ^ (0xD1B54A32D192ED03ull * (stream + 1));
        return Rng(splitmix64(sm));
    }

    std::uint64_t seed() const { return seed_; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t seed_;
    std::uint64_t state_[4];
    double cached_ = 0.0;
    bool have_cached_ = false;
};

} // namespace tnmera
