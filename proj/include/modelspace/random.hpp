#pragma once

#include <cstdint>
#include <random>

namespace modelspace {

// Portable RNG: the standard distributions are implementation-defined, so
// uniform and normal draws are derived from raw mt19937_64 output here to
// keep generated models and probe samples identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n) by rejection, n >= 1.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return r % n;
  }

  // Box-Muller; one draw per call.
  double normal();

 private:
  std::mt19937_64 engine_;
};

}  // namespace modelspace
