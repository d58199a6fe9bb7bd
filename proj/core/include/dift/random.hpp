#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dift {

/// Deterministic random source. Uniform draws come straight from
/// mt19937_64 (whose output sequence is pinned by the standard) and the
/// normal transform is done by hand, so identical seeds give identical
/// streams on every platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1). 53-bit resolution.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n) {
    // rejection sampling keeps the distribution exact
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = gen_();
    } while (v >= limit);
    return v % n;
  }

  double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller. One value per call; the spare is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Derives an independent per-sample stream; used to generate samples in
  /// parallel while staying deterministic (splitmix64 finalizer mix).
  static std::uint64_t split(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace dift
