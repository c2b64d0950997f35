#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace sqens {

using Rng = std::mt19937_64;

// Uniform in the open interval (0, 1); built from the raw engine output so the
// stream is identical across standard library implementations.
inline double uniform_open(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

inline double gumbel(Rng& rng) { return -std::log(-std::log(uniform_open(rng))); }

inline double standard_normal(Rng& rng) {
  // Box-Muller, one value per call.
  const double u1 = uniform_open(rng);
  const double u2 = uniform_open(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

/// Independent stream for (seed, tags...), e.g. (attack seed, image index).
inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ULL;
  auto mix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  h = mix(h);
  for (std::uint64_t t : tags) h = mix(h ^ mix(t + 0x632be59bd9b4e019ULL));
  return Rng(h);
}

}  // namespace sqens
