#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>

namespace escrl {

// All stochastic code draws from this engine. Only raw 64-bit outputs are
// consumed (never std:: distributions) so streams are identical across
// standard library implementations.
using Rng = std::mt19937_64;

// Uniform in [0, 1) with 53 bits of precision.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

// Uniform in [0, n); n must be > 0.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

// Draws an index with probability proportional to `weights` (nonnegative,
// positive sum).
std::size_t sample_categorical(std::span<const double> weights, Rng& rng);

// Fisher-Yates over [first, last).
template <class It>
void shuffle(It first, It last, Rng& rng) {
  auto n = static_cast<std::size_t>(last - first);
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = uniform_index(rng, i);
    std::swap(first[i - 1], first[j]);
  }
}

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& state);

}  // namespace escrl
