#pragma once

#include <cmath>
#include <cstdint>

namespace splat {

// Deterministic splitmix64 generator with a Box-Muller normal variate.
// The full state is three words, so it serializes into checkpoints and
// reproduces bit-identically across builds.
class Rng {
 public:
  struct State {
    uint64_t s = 0;
    uint8_t has_spare = 0;
    double spare = 0.0;
  };

  explicit Rng(uint64_t seed) { state_.s = seed; }

  uint64_t next_u64() {
    state_.s += 0x9E3779B97F4A7C15ull;
    uint64_t z = state_.s;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>(uniform() * static_cast<double>(n));
  }

  // Standard normal via Box-Muller with a cached spare.
  double normal() {
    if (state_.has_spare) {
      state_.has_spare = 0;
      return state_.spare;
    }
    double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    state_.spare = r * std::sin(theta);
    state_.has_spare = 1;
    return r * std::cos(theta);
  }

  State state() const { return state_; }
  void set_state(const State& st) { state_ = st; }

  // Stream-splitting helper: derives an independent seed from (seed, index).
  static uint64_t mix(uint64_t seed, uint64_t index) {
    uint64_t z = seed ^ (0x9E3779B97F4A7C15ull * (index + 1));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

 private:
  State state_;
};

}  // namespace splat
