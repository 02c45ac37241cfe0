#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "tslab/common.hpp"

namespace tslab {

// Deterministic random stream. mt19937_64 is fully specified by the C++
// standard and the value transforms below avoid the implementation-defined
// std distributions, so identical (seed, draw sequence) reproduce bit-exact
// values on every platform.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), gen_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() {
    ++counter_;
    return gen_();
  }

  // Uniform in [0, 1) with 53 random bits.
  real uniform() { return static_cast<real>(next_u64() >> 11) * 0x1.0p-53; }

  real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; consumes two draws, returns one value.
  real normal() {
    real u1 = uniform();
    real u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi_v<real> * u2);
  }

  real normal(real mean, real stddev) { return mean + stddev * normal(); }

  // Index in [0, n). Modulo bias is below 2^-50 for every n used here.
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    if (items.size() < 2) return;
    for (std::size_t i = items.size() - 1; i > 0; --i) {
      std::size_t j = index(i + 1);
      std::swap(items[i], items[j]);
    }
  }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
  std::mt19937_64 gen_;
};

}  // namespace tslab
