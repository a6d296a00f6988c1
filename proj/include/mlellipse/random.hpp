#pragma once

// Seed derivation. Every random stream in the library (one per pixel, one
// per trial) is an std::mt19937_64 seeded through splitmix64, so a stream
// can be regenerated in isolation from (parent seed, index).

#include <cstdint>
#include <random>

namespace mlellipse {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Child seed for stream `index` of `parent`:
/// splitmix64(parent ^ splitmix64(index + 1)).
inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
  return splitmix64(parent ^ splitmix64(index + 1));
}

inline std::mt19937_64 make_stream(std::uint64_t parent, std::uint64_t index) {
  return std::mt19937_64(derive_seed(parent, index));
}

/// Uniform double in the open interval (0, 1) from 53 random bits.
template <class Urbg>
double uniform_open01(Urbg& rng) {
  const std::uint64_t bits = static_cast<std::uint64_t>(rng()) >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

}  // namespace mlellipse
