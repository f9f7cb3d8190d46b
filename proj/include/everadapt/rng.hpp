#pragma once

#include <cstdint>
#include <cmath>
#include <string_view>

namespace everadapt {

// SplitMix64 step; used both as a PRNG kernel and as a hash mixer so that
// every stream of randomness in the project is reproducible bit-for-bit
// across platforms (std::uniform_real_distribution is not).
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t hash_mix(std::uint64_t seed, std::uint64_t value) {
    std::uint64_t s = seed ^ (value + 0x9e3779b97f4a7c15ull);
    return splitmix64(s);
}

inline std::uint64_t hash_mix(std::uint64_t seed, std::string_view text) {
    // FNV-1a folded into the splitmix state.
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return hash_mix(seed, h);
}

// Small deterministic PRNG. xoshiro-style quality is unnecessary here;
// splitmix64 streams are plenty for data synthesis and dropout masks.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {
        // Decorrelate trivially related seeds (0,1,2,...).
        splitmix64(state_);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller (portable, unlike std::normal_distribution).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace everadapt
