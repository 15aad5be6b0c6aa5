#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace stonefuse::rng {

// std::mt19937_64 has a fully specified algorithm, so it is portable.
// The std *distributions* are not; every draw below is built from raw bits
// and basic arithmetic only, which keeps generated datasets byte-identical
// across platforms.
class Engine {
public:
    explicit Engine(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t bits() { return gen_(); }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Irwin-Hall approximation: sum of 12 uniforms has mean 6, variance 1.
    // Bounded in [-6, 6] and free of transcendental calls.
    double normal() {
        double s = 0.0;
        for (int i = 0; i < 12; ++i) s += uniform();
        return s - 6.0;
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    // Unbiased integer in [0, n) via rejection on a power-of-two mask.
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        std::uint64_t mask = n - 1;
        mask |= mask >> 1;
        mask |= mask >> 2;
        mask |= mask >> 4;
        mask |= mask >> 8;
        mask |= mask >> 16;
        mask |= mask >> 32;
        std::uint64_t r;
        do {
            r = bits() & mask;
        } while (r >= n);
        return r;
    }

private:
    std::mt19937_64 gen_;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Stable sub-seed derivation from a base seed and a textual tag.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return splitmix64(base ^ h);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index) {
    return splitmix64(derive_seed(base, tag) ^ splitmix64(index));
}

// Fisher-Yates with the portable engine; std::shuffle is implementation-defined.
template <typename T>
void shuffle(std::vector<T>& v, Engine& eng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(eng.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace stonefuse::rng
