#include "shapkit/exact.hpp"

#include <cmath>
#include <vector>

#include "gtest/gtest.h"
#include "oracles.hpp"
#include "shapkit/errors.hpp"

namespace shapkit {
namespace {

TEST(Enumeration, AdditiveGameRecoversWeights) {
  const auto a = shapley_enumeration(Game::additive({1.0, 2.0, 3.0}, 0.0), 0);
  ASSERT_EQ(a.values.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a.values[i], i + 1.0, 1e-14);
  EXPECT_EQ(a.method, "exact");
}

TEST(Enumeration, SymmetricSquareGameSharesEqually) {
  std::vector<double> table(8);
  for (std::uint64_t c = 0; c < 8; ++c) {
    const double k = Subset::from_code(3, c).cardinality();
    table[c] = k * k;
  }
  const auto a = shapley_enumeration(testing::single_class_game(3, table), 0);
  for (double v : a.values) EXPECT_NEAR(v, 3.0, 1e-14);
}

TEST(Enumeration, TwoPlayerGame) {
  const auto a = shapley_enumeration(testing::two_player_game(), 0);
  EXPECT_NEAR(a.values[0], 1.5, 1e-15);
  EXPECT_NEAR(a.values[1], 2.5, 1e-15);
  EXPECT_LT(a.efficiency_gap, 1e-15);
}

TEST(Enumeration, MatchesPermutationOracle) {
  Rng rng(10);
  for (std::size_t d = 1; d <= 7; ++d) {
    const auto table = testing::random_table(d, rng);
    const auto expected = testing::permutation_shapley(table, d);
    const auto got = shapley_from_table(table, d);
    for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(got[i], expected[i], 1e-12) << "d=" << d;
  }
}

TEST(Enumeration, RejectsTooManyPlayers) {
  std::vector<std::vector<double>> w(1, std::vector<double>(21, 1.0));
  EXPECT_THROW(shapley_enumeration(Game::additive(w, {0.0}), 0), CapabilityError);
}

TEST(Wls, TwoPlayerGame) {
  const auto a = shapley_wls(testing::two_player_game(), 0);
  EXPECT_NEAR(a.values[0], 1.5, 1e-12);
  EXPECT_NEAR(a.values[1], 2.5, 1e-12);
}

TEST(Wls, ConstantGameGivesZero) {
  const auto a = shapley_wls(testing::single_class_game(5, std::vector<double>(32, 0.7)), 0);
  for (double v : a.values) EXPECT_NEAR(v, 0.0, 1e-14);
}

TEST(Wls, AgreesWithEnumerationOnRandomGames) {
  Rng rng(20);
  for (int trial = 0; trial < 20; ++trial) {
    const auto table = testing::random_table(8, rng);
    const auto e = shapley_from_table(table, 8);
    const auto w = shapley_wls_from_table(table, 8);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(w.phi[i], e[i], 1e-8);
    EXPECT_TRUE(std::isfinite(w.condition_number));
  }
}

TEST(ExactProperties, EfficiencySymmetryNullPlayer) {
  Rng rng(30);
  for (std::size_t d = 3; d <= 10; ++d) {
    auto table = testing::random_table(d, rng);
    // Make player d-1 a null player and players 0, 1 interchangeable.
    const std::uint64_t last = std::uint64_t{1} << (d - 1);
    for (std::uint64_t c = 0; c < table.size(); ++c) {
      if (c & last) table[c] = table[c & ~last];
    }
    for (std::uint64_t c = 0; c < table.size(); ++c) {
      const std::uint64_t swapped = (c & ~std::uint64_t{3}) | ((c & 1) << 1) | ((c >> 1) & 1);
      if (swapped > c) table[swapped] = table[c];
    }
    const Game g = testing::single_class_game(d, table);
    for (const auto& a : {shapley_enumeration(g, 0), shapley_wls(g, 0)}) {
      double sum = 0.0;
      for (double v : a.values) sum += v;
      EXPECT_NEAR(sum, table.back() - table.front(), 1e-9);
      EXPECT_LT(a.efficiency_gap, 1e-9);
      EXPECT_NEAR(a.values[d - 1], 0.0, 1e-12);
      EXPECT_NEAR(a.values[0], a.values[1], 1e-12);
    }
  }
}

TEST(ExactProperties, PermutingPlayersPermutesAttributions) {
  Rng rng(31);
  const std::size_t d = 6;
  const auto table = testing::random_table(d, rng);
  // Relabel: new player i is old player perm[i].
  const std::size_t perm[] = {3, 0, 5, 1, 4, 2};
  std::vector<double> relabeled(table.size());
  for (std::uint64_t c = 0; c < table.size(); ++c) {
    std::uint64_t old = 0;
    for (std::size_t i = 0; i < d; ++i) {
      if (c >> i & 1u) old |= std::uint64_t{1} << perm[i];
    }
    relabeled[c] = table[old];
  }
  const auto a = shapley_from_table(table, d);
  const auto b = shapley_from_table(relabeled, d);
  for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(b[i], a[perm[i]], 1e-14);
}

TEST(ExactProperties, SolversAgreeOnHundredGames) {
  Rng rng(40);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 + trial % 9;
    const auto table = testing::random_table(d, rng);
    const auto e = shapley_from_table(table, d);
    const auto w = shapley_wls_from_table(table, d);
    for (std::size_t i = 0; i < d; ++i) ASSERT_NEAR(w.phi[i], e[i], 1e-8) << "d=" << d;
  }
}

TEST(KernelLoss, ShapleyValuesAttainWlsOptimum) {
  Rng rng(41);
  const std::size_t d = 6;
  const auto table = testing::random_table(d, rng);
  const auto phi = shapley_from_table(table, d);
  const auto w = shapley_wls_from_table(table, d);
  // The normalized kernel differs from the characterization weights by the
  // constant factor sum_k (d-1) / (k (d-k)).
  double norm = 0.0;
  for (std::size_t k = 1; k < d; ++k) norm += (d - 1.0) / (k * (d - k + 0.0));
  EXPECT_NEAR(shapley_kernel_loss(table, d, phi), w.objective / norm, 1e-12);
  std::vector<double> off = phi;
  off[0] += 0.1;
  off[1] -= 0.1;
  EXPECT_GT(shapley_kernel_loss(table, d, off), shapley_kernel_loss(table, d, phi));
}

TEST(Attribution, JsonHasExpectedKeys) {
  const auto a = shapley_enumeration(testing::two_player_game(), 0);
  const auto j = a.to_json();
  EXPECT_EQ(j.at("method"), "exact");
  EXPECT_EQ(j.at("class"), 0);
  EXPECT_EQ(j.at("values").size(), 2u);
  EXPECT_TRUE(j.contains("efficiency_gap"));
  const auto back = Attribution::from_json(j);
  EXPECT_EQ(back.values, a.values);
}

}  // namespace
}  // namespace shapkit
