#pragma once

#include <cstdint>
#include <random>

namespace hotcalib {

// All stochastic code draws from a 64-bit Mersenne Twister. Per-task streams
// are seeded through SplitMix64 so that neighbouring task indices do not
// produce correlated engine states.
using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline Rng make_rng(std::uint64_t seed) { return Rng(splitmix64(seed)); }

inline Rng make_task_rng(std::uint64_t seed, std::uint64_t task_index) {
  return make_rng(seed + task_index);
}

// Unbiased integer in [0, n) by rejection; independent of the standard
// library's distribution implementation.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = Rng::max() - (Rng::max() % n + 1) % n;
  std::uint64_t draw = rng();
  while (draw > limit) draw = rng();
  return draw % n;
}

}  // namespace hotcalib
