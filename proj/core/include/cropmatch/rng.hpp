#pragma once

#include <cstdint>
#include <random>

namespace cropmatch {

/// Seeded random stream with explicit distribution code, so sequences are
/// reproducible across platforms and standard-library versions (std::
/// distributions make no such promise).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  /// Uniform double in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi). Returns lo when lo == hi.
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
  }

  /// Uniform integer in [0, n). n must be positive. Rejection sampling,
  /// no modulo bias.
  std::uint64_t uniform_int(std::uint64_t n);

  /// Standard normal via Box-Muller. Always consumes exactly two uniforms.
  double normal();

  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace cropmatch
