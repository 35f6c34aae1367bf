#pragma once

#include <cstdint>
#include <random>

namespace qmixlab {

// splitmix64 finalizer, used to derive independent stream seeds
inline std::uint64_t mix_bits(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    return mix_bits(mix_bits(a) ^ (b + 0x9e3779b97f4a7c15ULL));
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix_seed(mix_seed(a, b), c);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen_); }
    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(gen_);
    }
    // uniform integer in [0, n)
    int uniform_int(int n) { return std::uniform_int_distribution<int>(0, n - 1)(gen_); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen_); }

    std::mt19937_64& gen() { return gen_; }

private:
    std::mt19937_64 gen_;
};

}  // namespace qmixlab
