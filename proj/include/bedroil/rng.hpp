#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace bedroil {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// FNV-1a over bytes. Stable across platforms, unlike std::hash.
constexpr std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Seed for a named sub-component of a run, so that the stream a component
/// sees does not depend on the order in which siblings consume randomness.
constexpr std::uint64_t child_seed(std::uint64_t parent, std::string_view component,
                                   std::uint64_t index = 0) {
    return mix_seed(mix_seed(parent ^ fnv1a(component)) + index);
}

inline Rng make_rng(std::uint64_t seed) { return Rng{seed}; }

/// Uniform double in [0, 1) with 53 random bits. Defined here rather than via
/// std::uniform_real_distribution so the stream is identical across standard libraries.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Uniform integer in [0, n).
inline int uniform_index(Rng& rng, int n) {
    return static_cast<int>(uniform01(rng) * n) % n;
}

/// Inverse-CDF draw from a probability vector.
inline int sample_categorical(Rng& rng, std::span<const double> probs) {
    const double u = uniform01(rng);
    double acc = 0.0;
    int last_positive = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0) continue;
        last_positive = static_cast<int>(i);
        acc += probs[i];
        if (u < acc) return static_cast<int>(i);
    }
    return last_positive;
}

} // namespace bedroil
