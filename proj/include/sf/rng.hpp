#pragma once

#include <cmath>
#include <cstdint>

// Deterministic RNG utilities. Everything that draws randomness in this
// project goes through these so that a fixed seed reproduces identical
// bytes on re-runs. std::normal_distribution is implementation-defined,
// so Gaussian draws are hand-rolled Box-Muller on top of splitmix64.

namespace sf {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stateless counter hash: mixes an arbitrary number of words into one seed.
inline uint64_t hash_combine(uint64_t a, uint64_t b) {
  return splitmix64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(splitmix64(seed ^ 0xd1b54a32d192ed03ULL)) {}

  uint64_t next_u64() {
    state_ = splitmix64(state_);
    return state_;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  uint64_t uniform_index(uint64_t n) { return n ? next_u64() % n : 0; }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Per-pixel / per-sample stateless uniform: identical no matter which
// thread, chunk, or rect evaluates the pixel.
inline double counter_uniform(uint64_t seed, uint64_t a, uint64_t b, uint64_t c) {
  uint64_t h = hash_combine(hash_combine(hash_combine(seed, a), b), c);
  return static_cast<double>(splitmix64(h) >> 11) * 0x1.0p-53;
}

}  // namespace sf
