#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace batchsel {

// One 53-bit uniform variate in [0, 1). Every sampler in this library
// consumes exactly one of these per draw, which keeps the prefix-sum and
// alias draw structures comparable under a shared variate stream.
inline double uniform53(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform in (0, 1]; safe as a log() argument.
inline double uniform53_pos(std::mt19937_64& rng) {
  return (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
}

// Bounded integer draw via the multiply-shift reduction.
inline std::size_t bounded(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>(
      (static_cast<unsigned __int128>(rng()) * n) >> 64);
}

// Standard normal via Box-Muller (cosine branch only).
inline double gaussian(std::mt19937_64& rng) {
  constexpr double kTwoPi = 6.283185307179586476925287;
  const double u1 = uniform53_pos(rng);
  const double u2 = uniform53(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

// Fisher-Yates; kept in-house so shuffles are reproducible independent of
// the standard library implementation.
template <typename T>
void shuffle_in_place(std::vector<T>& values, std::mt19937_64& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    const std::size_t j = bounded(rng, i);
    std::swap(values[i - 1], values[j]);
  }
}

}  // namespace batchsel
