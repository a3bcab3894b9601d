#pragma once

#include <cstdint>
#include <random>

namespace metastep {

/// Seeded random source with hand-rolled distributions so that streams are
/// byte-identical across standard-library versions (std::*_distribution is
/// not pinned by the standard).
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller. One fresh pair per two draws.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Integer in [0, n).
  uint64_t below(uint64_t n) { return engine_() % n; }

  /// Derive an independent stream; used to give each task/worker its own rng.
  Rng split(uint64_t salt) { return Rng(engine_() ^ (salt * 0x9e3779b97f4a7c15ull)); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace metastep
