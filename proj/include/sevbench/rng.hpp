#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace sevbench {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seeded generator whose output sequence is fixed across standard libraries:
/// mt19937_64 is fully specified, and every derived draw below is computed
/// here rather than through the implementation-defined <random> distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  /// Independent stream for (seed, stream) pairs, e.g. one per bootstrap iteration.
  static Rng derive(std::uint64_t seed, std::uint64_t stream) {
    return Rng(splitmix64(seed) ^ splitmix64(stream + 0x5851f42d4c957f2dULL));
  }

  std::uint64_t next() { return engine_(); }

  /// Uniform integer in [0, n), unbiased (rejection on the top remainder).
  std::uint64_t uniform_index(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// First `count` entries of a seeded Fisher-Yates shuffle of [0, n).
  /// Prefixes are nested: sample(n, a) is a prefix of sample(n, b) for a <= b
  /// given the same generator state.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = 0; i < count && i + 1 < n; ++i) {
      const auto j = i + static_cast<std::size_t>(uniform_index(n - i));
      std::swap(perm[i], perm[j]);
    }
    perm.resize(count);
    return perm;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace sevbench
