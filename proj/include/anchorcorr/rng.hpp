#pragma once

#include <cmath>
#include <cstdint>

namespace anchorcorr {

// Deterministic pseudorandom generator built on splitmix64.
// The sequence depends only on the 64-bit seed, so runs are reproducible
// across platforms. split() forks an independent stream seeded from the
// parent state; parent and child never share draws afterwards.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1), 53-bit resolution
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  double log_uniform(double lo, double hi) {
    return std::exp(uniform(std::log(lo), std::log(hi)));
  }

  // uniform integer in [0, n); n must be positive
  int next_int(int n) {
    const int k = static_cast<int>(next_double() * static_cast<double>(n));
    return k >= n ? n - 1 : k;
  }

  // standard normal via Box-Muller; always consumes exactly two uniforms
  double normal() {
    const double u1 = 1.0 - next_double();  // (0, 1]
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  Rng split() { return Rng(next_u64()); }

 private:
  std::uint64_t state_;
};

}  // namespace anchorcorr
