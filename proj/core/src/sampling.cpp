#include "shapkit/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "shapkit/errors.hpp"

namespace shapkit {

double log_binomial(std::size_t n, std::size_t k) {
  if (k > n) throw UsageError("log_binomial: k > n");
  const std::size_t r = std::min(k, n - k);
  return std::lgamma(static_cast<double>(n) + 1.0) -
         std::lgamma(static_cast<double>(r) + 1.0) -
         std::lgamma(static_cast<double>(n - r) + 1.0);
}

SubsetDistribution::SubsetDistribution(std::size_t players, DistributionKind kind,
                                       std::vector<double> mass)
    : players_(players), kind_(kind), mass_(std::move(mass)) {
  cumulative_.resize(mass_.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < mass_.size(); ++k) {
    acc += mass_[k];
    cumulative_[k] = acc;
  }
}

SubsetDistribution SubsetDistribution::shapley_kernel(std::size_t players) {
  if (players < 2) throw UsageError("Shapley kernel requires at least 2 players");
  const double d = static_cast<double>(players);
  std::vector<double> weight(players + 1, 0.0);
  double total = 0.0;
  for (std::size_t k = 1; k < players; ++k) {
    const double kk = static_cast<double>(k);
    weight[k] = 1.0 / (kk * (d - kk));
    total += weight[k];
  }
  for (double& w : weight) w /= total;
  return SubsetDistribution(players, DistributionKind::shapley_kernel, std::move(weight));
}

SubsetDistribution SubsetDistribution::uniform_cardinality(std::size_t players) {
  if (players < 1) throw UsageError("distribution requires at least 1 player");
  std::vector<double> mass(players + 1, 1.0 / static_cast<double>(players + 1));
  return SubsetDistribution(players, DistributionKind::uniform_cardinality, std::move(mass));
}

SubsetDistribution SubsetDistribution::fixed_cardinality(std::size_t players,
                                                         std::size_t n) {
  if (players < 1) throw UsageError("distribution requires at least 1 player");
  if (n > players) throw UsageError("fixed cardinality exceeds player count");
  std::vector<double> mass(players + 1, 0.0);
  mass[n] = 1.0;
  return SubsetDistribution(players, DistributionKind::fixed_cardinality, std::move(mass));
}

double SubsetDistribution::pmf(const Subset& s) const {
  if (s.players() != players_) throw UsageError("pmf: subset has wrong player count");
  const std::size_t k = s.cardinality();
  if (mass_[k] == 0.0) return 0.0;
  return std::exp(std::log(mass_[k]) - log_binomial(players_, k));
}

bool SubsetDistribution::complement_symmetric() const {
  for (std::size_t k = 0; k <= players_; ++k) {
    if (mass_[k] != mass_[players_ - k]) return false;
  }
  return true;
}

std::size_t SubsetDistribution::draw_cardinality(Rng& rng) const {
  const double u = rng.uniform() * cumulative_.back();
  std::size_t last_positive = 0;
  for (std::size_t k = 0; k < mass_.size(); ++k) {
    if (mass_[k] == 0.0) continue;
    last_positive = k;
    if (u < cumulative_[k]) return k;
  }
  return last_positive;
}

Subset SubsetDistribution::draw(Rng& rng) const {
  const std::size_t k = draw_cardinality(rng);
  std::vector<std::size_t> order(players_);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Subset s(players_);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(players_ - i));
    std::swap(order[i], order[j]);
    s.set(order[i], true);
  }
  return s;
}

std::vector<Subset> SubsetDistribution::sample(Rng& rng, std::size_t count) const {
  std::vector<Subset> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(draw(rng));
  return out;
}

std::vector<std::pair<Subset, Subset>> SubsetDistribution::paired_sample(
    Rng& rng, std::size_t pair_count) const {
  if (!complement_symmetric()) {
    throw UsageError("paired sampling requires a complement-symmetric distribution");
  }
  std::vector<std::pair<Subset, Subset>> out;
  out.reserve(pair_count);
  for (std::size_t i = 0; i < pair_count; ++i) {
    Subset s = draw(rng);
    Subset c = s.complement();
    out.emplace_back(std::move(s), std::move(c));
  }
  return out;
}

}  // namespace shapkit
