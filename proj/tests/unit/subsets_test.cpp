#include <cmath>
#include <cstdint>
#include <vector>

#include "gtest/gtest.h"
#include "shapkit/errors.hpp"
#include "shapkit/rng.hpp"
#include "shapkit/sampling.hpp"
#include "shapkit/subset.hpp"

namespace shapkit {
namespace {

std::uint64_t choose(std::uint64_t n, std::uint64_t k) {
  std::uint64_t r = 1;
  for (std::uint64_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

TEST(Subset, CodeIsLittleEndian) {
  const Subset s = Subset::from_code(4, 0b0101);
  EXPECT_TRUE(s[0]);
  EXPECT_FALSE(s[1]);
  EXPECT_TRUE(s[2]);
  EXPECT_FALSE(s[3]);
  EXPECT_EQ(s.code(), 5u);
  EXPECT_EQ(s.indices(), (std::vector<std::size_t>{0, 2}));
}

TEST(Subset, ComplementInvariants) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 1 + rng.below(20);
    const Subset s = Subset::from_code(d, rng.next_u64() & ((std::uint64_t{1} << d) - 1));
    EXPECT_EQ(s.cardinality() + s.complement().cardinality(), d);
    EXPECT_EQ(s.complement().complement(), s);
  }
}

TEST(Subset, WithAndWithout) {
  const Subset s = Subset::empty(3).with(1);
  EXPECT_EQ(s.code(), 2u);
  EXPECT_EQ(s.with(0).without(1).code(), 1u);
}

TEST(LogBinomial, SymmetricBitForBit) {
  for (std::size_t n = 0; n <= 200; ++n) {
    for (std::size_t k = 0; k <= n; ++k) EXPECT_EQ(log_binomial(n, k), log_binomial(n, n - k));
  }
  EXPECT_NEAR(std::exp(log_binomial(10, 3)), 120.0, 1e-9);
}

TEST(Pmf, UniformCardinalityTwoPlayers) {
  const auto dist = SubsetDistribution::uniform_cardinality(2);
  EXPECT_NEAR(dist.pmf(Subset::from_code(2, 0)), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(dist.pmf(Subset::from_code(2, 1)), 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(dist.pmf(Subset::from_code(2, 3)), 1.0 / 3.0, 1e-15);
}

TEST(Pmf, ShapleyKernelThreePlayers) {
  const auto dist = SubsetDistribution::shapley_kernel(3);
  EXPECT_EQ(dist.pmf(Subset::empty(3)), 0.0);
  EXPECT_EQ(dist.pmf(Subset::full(3)), 0.0);
  for (std::uint64_t code = 1; code < 7; ++code) {
    EXPECT_NEAR(dist.pmf(Subset::from_code(3, code)), 1.0 / 6.0, 1e-15);
  }
}

TEST(Pmf, FixedCardinalitySingletons) {
  const auto dist = SubsetDistribution::fixed_cardinality(3, 1);
  for (std::uint64_t code = 0; code < 8; ++code) {
    const Subset s = Subset::from_code(3, code);
    EXPECT_NEAR(dist.pmf(s), s.cardinality() == 1 ? 1.0 / 3.0 : 0.0, 1e-15);
  }
}

TEST(Pmf, SumsToOneByEnumeration) {
  for (std::size_t d = 2; d <= 12; ++d) {
    for (const auto& dist :
         {SubsetDistribution::shapley_kernel(d), SubsetDistribution::uniform_cardinality(d),
          SubsetDistribution::fixed_cardinality(d, d / 2)}) {
      double total = 0.0;
      for (std::uint64_t code = 0; code < (std::uint64_t{1} << d); ++code) {
        total += dist.pmf(Subset::from_code(d, code));
      }
      EXPECT_NEAR(total, 1.0, 1e-10) << "d=" << d;
    }
  }
}

TEST(Pmf, ShapleyKernelComplementSymmetricExactly) {
  for (std::size_t d = 2; d <= 12; ++d) {
    const auto dist = SubsetDistribution::shapley_kernel(d);
    EXPECT_TRUE(dist.complement_symmetric());
    for (std::uint64_t code = 0; code < (std::uint64_t{1} << d); ++code) {
      const Subset s = Subset::from_code(d, code);
      EXPECT_EQ(dist.pmf(s), dist.pmf(s.complement()));
    }
  }
}

TEST(Pmf, ShapleyKernelMassMatchesLeastSquaresWeights) {
  for (std::size_t d = 2; d <= 12; ++d) {
    const auto dist = SubsetDistribution::shapley_kernel(d);
    // Per-cardinality mass C(d,k) * (d-1) / (C(d,k) k (d-k)), normalized.
    std::vector<double> mass(d + 1, 0.0);
    double total = 0.0;
    for (std::size_t k = 1; k < d; ++k) {
      const double c = static_cast<double>(choose(d, k));
      mass[k] = c * (static_cast<double>(d) - 1.0) /
                (c * static_cast<double>(k) * static_cast<double>(d - k));
      total += mass[k];
    }
    EXPECT_EQ(dist.cardinality_mass(0), 0.0);
    EXPECT_EQ(dist.cardinality_mass(d), 0.0);
    for (std::size_t k = 1; k < d; ++k) {
      EXPECT_NEAR(dist.cardinality_mass(k), mass[k] / total, 1e-12);
    }
  }
}

TEST(Sample, ZeroCountIsEmpty) {
  Rng rng(0);
  EXPECT_TRUE(SubsetDistribution::shapley_kernel(4).sample(rng, 0).empty());
}

TEST(Sample, ShapleyKernelNeverEmptyOrFull) {
  Rng rng(5);
  for (const auto& s : SubsetDistribution::shapley_kernel(5).sample(rng, 20000)) {
    EXPECT_GT(s.cardinality(), 0u);
    EXPECT_LT(s.cardinality(), 5u);
  }
}

TEST(Sample, DeterministicUnderSeed) {
  const auto dist = SubsetDistribution::uniform_cardinality(9);
  Rng a(17);
  Rng b(17);
  EXPECT_EQ(dist.sample(a, 100), dist.sample(b, 100));
}

// Fraction of subsets whose empirical frequency is within 3 binomial
// standard errors of pmf.
double frequency_agreement(const SubsetDistribution& dist, const std::vector<double>& counts,
                           double n) {
  const std::size_t d = dist.players();
  std::size_t ok = 0;
  std::size_t support = 0;
  for (std::uint64_t code = 0; code < counts.size(); ++code) {
    const double p = dist.pmf(Subset::from_code(d, code));
    if (p == 0.0) {
      EXPECT_EQ(counts[code], 0.0);
      continue;
    }
    ++support;
    const double se = std::sqrt(p * (1.0 - p) / n);
    if (std::abs(counts[code] / n - p) <= 3.0 * se) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(support);
}

TEST(Sample, EmpiricalFrequenciesMatchPmf) {
  Rng rng(99);
  for (const auto& dist :
       {SubsetDistribution::shapley_kernel(6), SubsetDistribution::uniform_cardinality(6)}) {
    std::vector<double> counts(64, 0.0);
    const std::size_t n = 200000;
    for (const auto& s : dist.sample(rng, n)) counts[s.code()] += 1.0;
    EXPECT_GE(frequency_agreement(dist, counts, static_cast<double>(n)), 0.95);
  }
}

TEST(PairedSample, PartnersAreComplements) {
  Rng rng(4);
  for (const auto& [s, c] : SubsetDistribution::shapley_kernel(7).paired_sample(rng, 500)) {
    EXPECT_EQ(s.cardinality() + c.cardinality(), 7u);
    EXPECT_EQ(c, s.complement());
  }
  EXPECT_EQ(Subset::from_indices(3, std::vector<std::size_t>{0}).complement().indices(),
            (std::vector<std::size_t>{1, 2}));
}

TEST(PairedSample, PooledMarginalMatchesShapleyKernel) {
  Rng rng(6);
  const auto dist = SubsetDistribution::shapley_kernel(6);
  std::vector<double> counts(64, 0.0);
  const std::size_t pairs = 100000;
  for (const auto& [s, c] : dist.paired_sample(rng, pairs)) {
    counts[s.code()] += 1.0;
    counts[c.code()] += 1.0;
  }
  EXPECT_GE(frequency_agreement(dist, counts, 2.0 * pairs), 0.95);
}

TEST(PairedSample, RejectsAsymmetricDistribution) {
  Rng rng(0);
  EXPECT_THROW(SubsetDistribution::fixed_cardinality(5, 1).paired_sample(rng, 3), UsageError);
  EXPECT_NO_THROW(SubsetDistribution::fixed_cardinality(4, 2).paired_sample(rng, 3));
}

}  // namespace
}  // namespace shapkit
