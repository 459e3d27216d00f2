#include "fixseg/random.hpp"

#include <cmath>
#include <numbers>

namespace fixseg {

double RandomSource::normal() {
  // Box-Muller; the second variate is discarded to keep the stream position simple.
  double u1 = uniform01();
  while (u1 <= 0.0) u1 = uniform01();
  const double u2 = uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::derive(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 over (seed, stream) so nearby seeds give unrelated engines
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return Rng(z ^ (z >> 31));
}

}  // namespace fixseg
