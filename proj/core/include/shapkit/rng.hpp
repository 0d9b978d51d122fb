#pragma once

#include <cstdint>
#include <random>

namespace shapkit {

// SplitMix64 finalizer. Used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

// Deterministic random stream: a 64-bit Mersenne Twister (std::mt19937_64,
// whose output sequence is fixed by the standard) with hand-written
// conversions so that uniform and normal draws do not depend on the
// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). Rejection sampling, unbiased.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller; caches the second variate.
  double normal();

  // Independent child stream for worker or task `index`.
  Rng split(std::uint64_t index) const { return Rng(mix_seed(seed_, index)); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace shapkit
