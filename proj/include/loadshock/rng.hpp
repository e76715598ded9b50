#pragma once

#include <cmath>
#include <cstdint>

namespace loadshock::rng {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Deterministic xoshiro256** generator. Owned here so draws are identical
/// across platforms and standard-library versions.
class Engine {
public:
    explicit Engine(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : s_) word = splitmix64(sm);
        cached_valid_ = false;
    }

    /// Substream i of a master seed; substreams are mutually independent so
    /// per-draw work can be evaluated in any order.
    static Engine substream(std::uint64_t master_seed, std::uint64_t index) {
        std::uint64_t sm = master_seed;
        std::uint64_t base = splitmix64(sm);
        return Engine(base ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
    }

    std::uint64_t next_u64() {
        auto rotl = [](std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
        std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform in (0, 1).
    double next_uniform() {
        std::uint64_t bits = next_u64() >> 11;  // 53 random bits
        return (double(bits) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller (cached pair).
    double next_normal() {
        if (cached_valid_) {
            cached_valid_ = false;
            return cached_;
        }
        double u1 = next_uniform();
        double u2 = next_uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        cached_valid_ = true;
        return r * std::cos(a);
    }

private:
    std::uint64_t s_[4] = {};
    double cached_ = 0;
    bool cached_valid_ = false;
};

}  // namespace loadshock::rng
