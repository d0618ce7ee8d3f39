#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace hybridsep {

uint64_t splitmix64(uint64_t x);

/// Mixes a base seed with stream identifiers into an independent seed.
uint64_t derive_seed(uint64_t seed, std::initializer_list<uint64_t> stream);

/// Deterministic generator. Uses mt19937_64 (whose output sequence is fixed by
/// the standard) with hand-written transforms, so draws are reproducible
/// across standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi].
  int64_t uniform_int(int64_t lo, int64_t hi);
  /// Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Counter-based standard normal: a pure function of (seed, i, j).
double hashed_normal(uint64_t seed, uint64_t i, uint64_t j);

}  // namespace hybridsep
