#pragma once

// Deterministic random source. Every stochastic routine in the library draws
// through this type; the normal and integer samplers are hand-rolled so a
// stream depends only on the seed, not on the standard library's
// distribution implementations.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace cdsynth {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Stable per-index stream seed. Injective in index for a fixed base, so
// derived seeds never collide.
inline uint64_t derive_seed(uint64_t base, uint64_t index) {
  return splitmix64(base ^ (0x9E3779B97F4A7C15ull * (index + 1)));
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(splitmix64(seed)) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; the second sample of each pair is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    constexpr double two_pi = 6.283185307179586476925286766559;
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0,1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = two_pi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Uniform integer in [0, n); rejection sampling, no modulo bias.
  int uniform_int(int n) {
    if (n <= 0) throw std::domain_error("Rng::uniform_int: n must be positive");
    uint64_t bound = static_cast<uint64_t>(n);
    uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return static_cast<int>(x % bound);
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cdsynth
