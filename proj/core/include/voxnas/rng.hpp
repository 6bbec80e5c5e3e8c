#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "voxnas/errors.hpp"

namespace voxnas {

// Seeded random stream with hand-rolled distributions. std::mt19937_64 output
// is fully specified, while the standard distributions are not; deriving
// uniform/normal/int draws directly from raw engine words keeps every sampled
// value reproducible across standard libraries and serializable mid-stream.
class Rng {
  public:
    Rng() : engine_(0x9e3779b97f4a7c15ull) {}
    explicit Rng(uint64_t seed) : engine_(seed) {}

    void seed(uint64_t s) { engine_.seed(s); }

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random mantissa bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Rejection sampling, no modulo bias.
    int64_t uniform_int(int64_t n) {
        if (n <= 0) throw ArgumentError("uniform_int: n must be positive");
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return static_cast<int64_t>(x % un);
    }

    bool coin() { return (engine_() & 1u) != 0; }

    // Standard normal via Box-Muller. Stateless on purpose: two engine draws
    // per call, nothing cached between calls.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Categorical draw over unnormalized non-negative weights.
    int64_t categorical(const double* probs, int64_t k) {
        double total = 0.0;
        for (int64_t i = 0; i < k; ++i) total += probs[i];
        double r = uniform() * total;
        for (int64_t i = 0; i < k; ++i) {
            r -= probs[i];
            if (r < 0.0) return i;
        }
        return k - 1;
    }

    std::string save_state() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void load_state(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
        if (is.fail()) throw FormatError("Rng: malformed engine state");
    }

    bool operator==(const Rng& other) const { return engine_ == other.engine_; }

  private:
    std::mt19937_64 engine_;
};

// Stable 64-bit FNV-1a, used for fold assignment by case id.
inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace voxnas
