#pragma once

// Self-contained random streams. Standard-library distributions are
// implementation-defined, so everything that must be reproducible from a
// stored seed goes through these helpers instead.

#include <cmath>
#include <cstdint>

namespace petrel::rng {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// xoshiro256** seeded via splitmix64.
class Stream {
public:
    explicit Stream(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0,1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller; one spare value cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        // u1 in (0,1] so the log is finite.
        const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Knuth multiplication method, chunked so exp(-lambda) stays normal.
    std::uint64_t poisson(double lambda) {
        std::uint64_t total = 0;
        while (lambda > 60.0) {
            total += poisson_small(60.0);
            lambda -= 60.0;
        }
        return total + poisson_small(lambda);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t poisson_small(double lambda) {
        if (lambda <= 0.0) return 0;
        const double limit = std::exp(-lambda);
        double prod = 1.0;
        std::uint64_t k = 0;
        do {
            ++k;
            prod *= uniform();
        } while (prod > limit);
        return k - 1;
    }

    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Independent child seed for a tagged sub-stream of `seed`.
inline std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t sm = seed ^ (0x6a09e667f3bcc909ULL + tag * 0x9e3779b97f4a7c15ULL);
    splitmix64(sm);
    return splitmix64(sm);
}

} // namespace petrel::rng
