#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace spotkit {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream seed for (seed, tag, index); keeps every consumer of
// randomness reproducible regardless of call order elsewhere.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : tag) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
  return splitmix64(splitmix64(seed ^ h) + index);
}

inline Rng make_rng(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) {
  return Rng(derive_seed(seed, tag, index));
}

// Beta(a, a) via the ratio of two gamma draws.
inline double sample_beta(double a, double b, Rng& rng) {
  std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
  const double x = ga(rng), y = gb(rng);
  if (x + y <= 0.0) return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.5 ? 0.0 : 1.0;
  return x / (x + y);
}

}  // namespace spotkit
