#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace koopwind {

// Explicit mappings so that sequences do not depend on the standard
// library's distribution implementations.

inline double uniform01(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline double standard_normal(std::mt19937_64& rng) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
    return std::min<std::size_t>(n - 1, std::size_t(uniform01(rng) * double(n)));
}

}  // namespace koopwind
