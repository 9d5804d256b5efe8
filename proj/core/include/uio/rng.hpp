#pragma once

#include <cstdint>
#include <vector>

namespace uio {

// Counter-keyed splitmix64 stream. Draws are reproducible across platforms
// and independent of call history when constructed via `at(seed, step, slot)`,
// which is what the data pipeline relies on for deterministic resume.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  // Derive an independent stream for a (seed, step, slot) coordinate.
  static Rng at(uint64_t seed, uint64_t step, uint64_t slot = 0);

  uint64_t next_u64();

  // Uniform in [0, 1) with 53-bit resolution.
  double next_double();

  // Uniform integer in [0, n). n must be > 0. Rejection-free modulo is fine
  // at desk scale; the bias for n << 2^64 is unobservable.
  uint64_t next_below(uint64_t n);

  // Standard normal via Box-Muller (no cached spare; two draws per call).
  double next_gaussian();

  // Fisher-Yates with this stream. Stable definition, unlike std::shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
      size_t j = static_cast<size_t>(next_below(i + 1));
      std::swap(v[i], v[j]);
    }
  }

  // k distinct indices from [0, n), in increasing order.
  std::vector<int> sample_without_replacement(int n, int k);

 private:
  uint64_t state_;
};

}  // namespace uio
