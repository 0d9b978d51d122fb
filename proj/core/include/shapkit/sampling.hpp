#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "shapkit/rng.hpp"
#include "shapkit/subset.hpp"

namespace shapkit {

// log C(n, k), evaluated as a function of min(k, n - k) so that
// log_binomial(n, k) == log_binomial(n, n - k) bit for bit.
double log_binomial(std::size_t n, std::size_t k);

enum class DistributionKind { shapley_kernel, uniform_cardinality, fixed_cardinality };

// Distribution over subsets that is uniform within each cardinality, stored
// as its per-cardinality mass (length d + 1).
//
//   shapley_kernel       mass_k proportional to 1 / (k (d - k)), 0 < k < d
//   uniform_cardinality  mass_k = 1 / (d + 1)
//   fixed_cardinality(n) mass_n = 1
class SubsetDistribution {
 public:
  static SubsetDistribution shapley_kernel(std::size_t players);
  static SubsetDistribution uniform_cardinality(std::size_t players);
  static SubsetDistribution fixed_cardinality(std::size_t players, std::size_t n);

  std::size_t players() const { return players_; }
  DistributionKind kind() const { return kind_; }
  const std::vector<double>& cardinality_masses() const { return mass_; }
  double cardinality_mass(std::size_t k) const { return mass_.at(k); }

  // Probability of one specific subset.
  double pmf(const Subset& s) const;

  // True when pmf(s) == pmf(complement(s)) for every s.
  bool complement_symmetric() const;

  Subset draw(Rng& rng) const;
  std::vector<Subset> sample(Rng& rng, std::size_t count) const;
  // Each pair is (s, complement(s)) with s drawn from this distribution.
  // Throws UsageError unless the distribution is complement-symmetric.
  std::vector<std::pair<Subset, Subset>> paired_sample(Rng& rng,
                                                       std::size_t pair_count) const;

 private:
  SubsetDistribution(std::size_t players, DistributionKind kind,
                     std::vector<double> mass);
  std::size_t draw_cardinality(Rng& rng) const;

  std::size_t players_;
  DistributionKind kind_;
  std::vector<double> mass_;
  std::vector<double> cumulative_;
};

}  // namespace shapkit
