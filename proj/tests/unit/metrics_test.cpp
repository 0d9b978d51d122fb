#include "shapkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "gtest/gtest.h"
#include "oracles.hpp"
#include "shapkit/errors.hpp"
#include "shapkit/exact.hpp"

namespace shapkit {
namespace {

TEST(InsertionDeletion, TwoPlayerGameByHand) {
  const Game g = testing::two_player_game();
  const std::vector<double> attr = {1.5, 2.5};
  const auto ins = insertion_deletion(g, 0, attr, CurveDirection::insert);
  ASSERT_EQ(ins.points.size(), 3u);
  EXPECT_EQ(ins.points[1], (std::pair<double, double>{0.5, 2.0}));
  EXPECT_DOUBLE_EQ(ins.auc, 2.0);
  const auto del = insertion_deletion(g, 0, attr, CurveDirection::remove);
  EXPECT_EQ(del.points[0].second, 4.0);
  EXPECT_EQ(del.points[1].second, 1.0);
  EXPECT_EQ(del.points[2].second, 0.0);
  EXPECT_DOUBLE_EQ(del.auc, 1.5);
}

TEST(InsertionDeletion, TiesBreakByIndex) {
  const Game g = testing::two_player_game();
  const std::vector<double> tied = {1.0, 1.0};
  const auto ins = insertion_deletion(g, 0, tied, CurveDirection::insert);
  EXPECT_EQ(ins.points[1].second, 1.0);
  EXPECT_THROW(insertion_deletion(g, 0, std::vector<double>{1.0}, CurveDirection::insert),
               UsageError);
}

TEST(InsertionDeletion, BestOrderingMaximizesInsertionForAdditiveGame) {
  const Game g = Game::additive({0.1, 3.0, -1.0, 2.0}, 0.0);
  const std::vector<double> good = {0.1, 3.0, -1.0, 2.0};
  const std::vector<double> bad = {3.0, -1.0, 2.0, 0.1};
  EXPECT_GT(insertion_deletion(g, 0, good, CurveDirection::insert).auc,
            insertion_deletion(g, 0, bad, CurveDirection::insert).auc);
  EXPECT_LT(insertion_deletion(g, 0, good, CurveDirection::remove).auc,
            insertion_deletion(g, 0, bad, CurveDirection::remove).auc);
}

TEST(Pearson, KnownValues) {
  const std::vector<double> a = {1, 2, 3, 4};
  const std::vector<double> b = {2, 4, 6, 8};
  const std::vector<double> c = {4, 3, 2, 1};
  const std::vector<double> flat = {1, 1, 1, 1};
  EXPECT_DOUBLE_EQ(*pearson(a, b), 1.0);
  EXPECT_DOUBLE_EQ(*pearson(a, c), -1.0);
  EXPECT_FALSE(pearson(a, flat).has_value());
  const std::vector<double> x = {1, 2, 3};
  const std::vector<double> y = {1, 3, 2};
  EXPECT_NEAR(*pearson(x, y), 0.5, 1e-15);
  EXPECT_THROW(pearson(a, x), UsageError);
}

TEST(SensitivityN, ExactForAdditiveGames) {
  const std::vector<double> w = {0.5, -1.0, 2.0, 0.25, 1.5, -0.5};
  const Game g = Game::additive(w, 1.0);
  Rng rng(1);
  for (std::size_t n = 1; n < 6; ++n) {
    EXPECT_NEAR(*sensitivity_n(g, 0, w, n, 50, rng), 1.0, 1e-12);
  }
  EXPECT_NEAR(*faithfulness(g, 0, w, 50, rng), 1.0, 1e-12);
  EXPECT_THROW(sensitivity_n(g, 0, w, 0, 50, rng), UsageError);
  EXPECT_THROW(sensitivity_n(g, 0, w, 6, 50, rng), UsageError);
  EXPECT_THROW(faithfulness(g, 0, w, 1, rng), UsageError);
}

TEST(SensitivityN, ShapleyBeatsShuffledAttributions) {
  Rng rng(2);
  const std::size_t d = 8;
  auto table = testing::random_table(d, rng);
  // Mostly additive plus noise, so the exact attributions explain drops well.
  const std::vector<double> w = {2, -1, 0.5, 3, -2, 1, 0.1, -0.7};
  for (std::uint64_t code = 0; code < table.size(); ++code) {
    table[code] *= 0.1;
    for (std::size_t i = 0; i < d; ++i) {
      if (code >> i & 1u) table[code] += w[i];
    }
  }
  const Game g = testing::single_class_game(d, table);
  const auto exact = shapley_from_table(table, d);
  std::vector<double> shuffled = {exact[3], exact[0], exact[6], exact[1],
                                  exact[7], exact[2], exact[5], exact[4]};
  Rng a(3);
  Rng b(3);
  EXPECT_GT(*faithfulness(g, 0, exact, 500, a), *faithfulness(g, 0, shuffled, 500, b));
}

TEST(RemoveTopK, DropsHighestScores) {
  const std::vector<double> attr = {0.2, 0.9, -0.1, 0.5};
  EXPECT_EQ(remove_top_k(attr, 0), Subset::full(4));
  EXPECT_EQ(remove_top_k(attr, 2), Subset::from_bits({1, 0, 1, 0}));
  EXPECT_EQ(remove_top_k(attr, 4), Subset::empty(4));
  EXPECT_THROW(remove_top_k(attr, 5), UsageError);
}

TEST(Roar, StrategyNamesRoundTrip) {
  for (RoarStrategy s : {RoarStrategy::evaluate_surrogate, RoarStrategy::evaluate_masked_model,
                         RoarStrategy::retrain, RoarStrategy::retrain_without_positions}) {
    EXPECT_EQ(parse_roar_strategy(roar_strategy_name(s)), s);
  }
  EXPECT_THROW(parse_roar_strategy("nope"), UsageError);
}

class RoarFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    config_ = ViTConfig::mini();
    config_.embed = 16;
    config_.layers = 1;
    Rng rng(4);
    model_ = ViTWeights::init(config_, rng);
    for (std::size_t i = 0; i < 12; ++i) {
      LabeledExample ex;
      ex.image = Image(config_.height, config_.width, 1);
      for (double& v : ex.image.pixels) v = rng.normal();
      ex.label = i % 4;
      examples_.push_back(std::move(ex));
      std::vector<double> a(8);
      for (double& v : a) v = rng.normal();
      attributions_.push_back(std::move(a));
    }
  }
  ViTConfig config_;
  ViTWeights model_;
  std::vector<LabeledExample> examples_;
  std::vector<std::vector<double>> attributions_;
};

TEST_F(RoarFixture, EvaluationStrategyMatchesDirectMasking) {
  const RoarSplit split{examples_, attributions_};
  RoarOptions options;
  options.evaluator = &model_;
  const std::vector<std::size_t> ks = {0, 3, 8};
  const auto curve = roar_curve(RoarStrategy::evaluate_surrogate, split, ks, options);
  ASSERT_EQ(curve.size(), 3u);
  for (const auto& point : curve) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < examples_.size(); ++i) {
      const auto p = forward_masked(model_, examples_[i].image,
                                    remove_top_k(attributions_[i], point.k));
      correct += static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()) ==
                 examples_[i].label;
    }
    EXPECT_DOUBLE_EQ(point.accuracy, static_cast<double>(correct) / examples_.size());
  }
  EXPECT_THROW(roar_curve(RoarStrategy::evaluate_surrogate, split, ks, RoarOptions{}), UsageError);
}

TEST_F(RoarFixture, RetrainingRunsForEveryK) {
  const RoarSplit split{examples_, attributions_};
  RoarOptions options;
  options.config = config_;
  options.schedule.epochs = 1;
  options.schedule.batch_size = 4;
  options.train = split;
  const std::vector<std::size_t> ks = {0, 4};
  for (RoarStrategy s : {RoarStrategy::retrain, RoarStrategy::retrain_without_positions}) {
    const auto curve = roar_curve(s, split, ks, options);
    ASSERT_EQ(curve.size(), 2u);
    for (const auto& p : curve) {
      EXPECT_GE(p.accuracy, 0.0);
      EXPECT_LE(p.accuracy, 1.0);
    }
  }
  const std::vector<std::vector<double>> short_list(3, std::vector<double>(8));
  const RoarSplit broken{examples_, short_list};
  EXPECT_THROW(roar_curve(RoarStrategy::retrain, broken, ks, options), UsageError);
}

}  // namespace
}  // namespace shapkit
