#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace fixseg {

/// Source of uniform variates in [0, 1). Every sampler in the library is written against this
/// interface so that tests can script exact draws.
class RandomSource {
 public:
  virtual ~RandomSource() = default;
  virtual double uniform01() = 0;

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  bool bernoulli(double p) { return uniform01() < p; }
  std::size_t index(std::size_t n) {
    auto i = static_cast<std::size_t>(uniform01() * static_cast<double>(n));
    return i < n ? i : n - 1;
  }
  double normal();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }
};

/// Seeded Mersenne-Twister stream. The mapping from engine output to variates is fixed here
/// (53-bit mantissa fill) so results do not depend on the standard library's distributions.
class Rng final : public RandomSource {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform01() override { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Derive an independent child stream; `stream` distinguishes call sites.
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
};

}  // namespace fixseg
