#pragma once

#include <cmath>
#include <cstdint>

namespace magicnet {

// Deterministic splitmix64 generator. All randomness in the library flows
// through this class so that a seed produces the same bytes on every
// platform; std::uniform_*_distribution is implementation-defined and
// would break that.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  // Independent generator for substream `stream_id` of `seed`. Substreams
  // do not depend on how much the parent has been consumed.
  static Rng stream(uint64_t seed, uint64_t stream_id) {
    Rng r(mix(seed ^ mix(stream_id + 0x9E3779B97F4A7C15ull)));
    return r;
  }

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    return mix(state_);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0.
  uint64_t uniform_index(uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller; the spare value is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log1p(-u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace magicnet
