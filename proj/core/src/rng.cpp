#include "cropmatch/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cropmatch {

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
  if (n == 1) return 0;
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  for (;;) {
    std::uint64_t x = gen_();
    if (x < limit) return x % n;
  }
}

double Rng::normal() {
  // Both uniforms drawn unconditionally; u1 nudged away from 0 so the log
  // stays finite.
  double u1 = uniform();
  double u2 = uniform();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace cropmatch
