// Deterministic random number generation.
//
// std::mt19937_64 has a standard-specified output sequence, but the standard
// library's distribution adaptors do not, so the distributions here are
// written out explicitly. Given one seed, every draw is identical across
// compilers and platforms, which is what makes byte-identical experiment
// reruns possible.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace odegan {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t raw() { return engine_(); }

  // Uniform on [0, 1) with full 53-bit resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller. The second variate of each pair is
  // discarded so the draw sequence stays a pure function of call order.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]: keeps the log finite
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform index in [0, n). Modulo bias is below 2^-59 for the mixture sizes
  // used here and is the price of a platform-independent sequence.
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

  // Derives an independent deterministic stream, e.g. for evaluation-time
  // sampling that must not perturb the training draw sequence.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t x = seed ^ (0x9E3779B97F4A7C15ULL + salt + (seed << 6) + (seed >> 2));
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace odegan
