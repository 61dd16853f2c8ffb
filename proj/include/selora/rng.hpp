#pragma once

#include <cstdint>
#include <random>

namespace selora {

/// Seeded generator with hand-rolled draw helpers so sequences depend only
/// on the engine, not on stdlib distribution internals.
class Rng {
public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, n), rejection-sampled.
  int64_t uniform_int(int64_t n);

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01();

  /// Box-Muller, two uniforms per draw.
  double gaussian(double mean, double stddev);

  /// Independent child stream.
  Rng fork(uint64_t stream) const;

private:
  std::mt19937_64 engine_;
};

}  // namespace selora
