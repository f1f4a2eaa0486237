#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ganproj {

/// SplitMix64 finalizer; used to derive independent seeds.
std::uint64_t splitmix64(std::uint64_t x);

/// Folds a base seed and a path of integer tags into one 64-bit seed.
/// derive_seed(s, {a, b}) names the substream for (a, b) under s.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

/// Seeded random stream.
///
/// Engine is std::mt19937_64 seeded with the 64-bit seed (its output sequence
/// is fixed by the C++ standard). Uniforms take the top 53 bits of each draw:
/// uniform01() = ((x >> 11) + 0.5) * 2^-53, which lies strictly inside (0, 1).
/// Normals use the Box-Muller transform on two consecutive uniforms u1, u2:
/// r = sqrt(-2 ln u1), first = r cos(2 pi u2), second = r sin(2 pi u2); the
/// second value is cached and returned on the next call.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    double uniform01();
    /// Strictly inside (-1, 1).
    double uniform_pm1() { return 2.0 * uniform01() - 1.0; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace ganproj
