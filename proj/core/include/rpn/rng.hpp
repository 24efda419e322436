#pragma once

#include <cstdint>
#include <random>

namespace rpn {

// Single RNG type used everywhere.  Determinism contract: the same binary,
// seed, and draw sequence reproduce bitwise-identical streams.
using Rng = std::mt19937_64;

// splitmix64-style mixer deriving decorrelated per-task seeds from a base
// seed and a stream index (fold, ensemble member, worker...).  Parallel
// schedules stay reproducible because each task owns its derived stream.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace rpn
