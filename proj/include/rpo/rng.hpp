#pragma once

/**
 * Deterministic splittable random streams.
 *
 * Every stochastic routine in the pipeline takes an explicit stream
 * derived from a (seed, key...) tuple, so results are independent of
 * worker count and call interleaving. The generator is xoshiro256**
 * seeded through splitmix64; both are implemented here verbatim so the
 * bit stream never depends on the standard library implementation
 * (std::uniform_* distributions are not portable across libstdc++
 * versions, which would break byte-identical reruns).
 */

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "rpo/common.hpp"

namespace rpo {

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class RngStream {
 public:
  RngStream() : RngStream(0) {}

  explicit RngStream(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64(sm);
  }

  /// Derive an independent child stream from this seed and extra keys.
  /// derive(seed, {problem_id, step, attempt}) is stable across workers.
  static RngStream derive(uint64_t seed, std::initializer_list<uint64_t> keys) {
    uint64_t sm = seed;
    uint64_t mixed = splitmix64(sm);
    for (uint64_t k : keys) {
      sm ^= k + 0x9E3779B97F4A7C15ULL + (sm << 6) + (sm >> 2);
      mixed ^= splitmix64(sm);
    }
    return RngStream(mixed);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    require(lo <= hi, "uniform_int: empty range");
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  /// Standard normal via Box-Muller (self-contained, portable).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Draw an index from an (unnormalized is fine) nonnegative weight vector.
  int categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    require(total > 0.0, "categorical: all-zero weights");
    double u = uniform() * total;
    for (size_t i = 0; i < weights.size(); ++i) {
      u -= weights[i];
      if (u < 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

  /// Seeded Fisher-Yates permutation of [0, n).
  std::vector<size_t> permutation(size_t n) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    for (size_t i = n; i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(idx[i - 1], idx[j]);
    }
    return idx;
  }

  std::array<uint64_t, 4> state() const { return state_; }
  void set_state(const std::array<uint64_t, 4>& s) { state_ = s; }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<uint64_t, 4> state_{};
};

}  // namespace rpo
