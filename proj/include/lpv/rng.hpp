#pragma once

#include <cstdint>
#include <random>

#include "lpv/real.hpp"

namespace lpv::inline LPV_NS {

// Seedable generator with a platform-independent stream. std::mt19937_64 is
// fully specified by the standard; the distributions are not, so the
// conversions to reals and bounded integers are done here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform in [0, n), unbiased.
  std::uint64_t below(std::uint64_t n);
  // Uniform integer in [lo, hi].
  int range(int lo, int hi) { return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo) + 1)); }
  double normal();

 private:
  std::mt19937_64 engine_;
};

// SplitMix64 finalizer; derives independent seeds from (seed, stream).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace lpv::inline LPV_NS
