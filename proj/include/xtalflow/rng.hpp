#pragma once

// Self-contained deterministic RNG. Streams are reproducible byte-for-byte
// across platforms and standard libraries, which the run reports rely on.

#include <cmath>
#include <cstdint>
#include <vector>

namespace xtalflow {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// xoshiro256** seeded via splitmix64.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& s : state_) s = splitmix64(sm);
        have_gauss_ = false;
    }

    // Independent substream; (seed, index) pairs never collide in practice
    // because the mix runs through splitmix64 twice.
    static Rng derive(std::uint64_t seed, std::uint64_t index) {
        std::uint64_t sm = seed;
        std::uint64_t a = splitmix64(sm);
        sm = a ^ (index * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL);
        return Rng(splitmix64(sm));
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Rejection sampling to avoid modulo bias.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    // Standard normal via Box-Muller (deterministic, no libm distribution).
    double gauss() {
        if (have_gauss_) {
            have_gauss_ = false;
            return gauss_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.28318530717958647692 * u2;
        gauss_ = r * std::sin(theta);
        have_gauss_ = true;
        return r * std::cos(theta);
    }

    void fill_gauss(std::vector<double>& out) {
        for (auto& v : out) v = gauss();
    }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4];
    bool have_gauss_ = false;
    double gauss_ = 0.0;
};

}  // namespace xtalflow
