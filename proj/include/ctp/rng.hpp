#pragma once

#include <cstdint>
#include <random>

namespace ctp {

// Seeding and uniform draws used everywhere a result must be reproducible.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard, so a given seed yields the same bits on every conforming
// platform. Uniform reals are built from the top 53 bits of one engine
// output instead of std::uniform_real_distribution, whose algorithm is
// implementation-defined. Seeds for sub-streams (per record, per step, per
// trial) are derived with the SplitMix64 finalizer.

using Engine = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed for the `index`-th sub-stream of `base`. Distinct (base, index)
/// pairs give statistically independent streams.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(base) ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Engine& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

/// Uniform double in [0, 1) computed directly from a seed, no engine state.
constexpr double uniform01_from_seed(std::uint64_t seed) noexcept {
  return static_cast<double>(splitmix64(seed) >> 11) * 0x1.0p-53;
}

}  // namespace ctp
