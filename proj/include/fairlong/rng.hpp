#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace fairlong {

// Deterministic, platform-independent random stream built on splitmix64.
// Named substreams are derived from a master seed so that reseeding one
// phase leaves the others untouched.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // [0, 1) with 53 bits of mantissa
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    int bernoulli(double p) { return uniform() < p ? 1 : 0; }

    // Keyed derivation: master seed -> named substream -> indexed stream.
    static std::uint64_t derive(std::uint64_t master, std::string_view stream,
                                std::uint64_t index = 0) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (char c : stream) {
            h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
            h *= 0x100000001b3ULL;
        }
        std::uint64_t z = master ^ mix(h) ^ mix(index * 0x9e3779b97f4a7c15ULL + 1);
        return mix(z);
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace fairlong
