#include "shapkit/game.hpp"

#include <memory>
#include <vector>

#include "gtest/gtest.h"
#include "oracles.hpp"
#include "shapkit/errors.hpp"
#include "shapkit/vit.hpp"

namespace shapkit {
namespace {

TEST(Game, AdditiveEvaluate) {
  const Game g = Game::additive({1.0, 2.0}, 0.0);
  EXPECT_EQ(g.evaluate(Subset::from_code(2, 0b01), 0), 1.0);
  const auto [grand, null] = Game::additive({1.0, 2.0}, 3.0).grand_and_null(0);
  EXPECT_EQ(grand, 6.0);
  EXPECT_EQ(null, 3.0);
}

TEST(Game, TabularLookupUsesLittleEndianCodes) {
  const Game g = testing::two_player_game();
  EXPECT_EQ(g.evaluate(Subset::full(2), 0), 4.0);
  EXPECT_EQ(g.evaluate(Subset::from_bits({1, 0}), 0), 1.0);
  EXPECT_EQ(g.evaluate(Subset::from_bits({0, 1}), 0), 2.0);
  const auto [grand, null] = g.grand_and_null(0);
  EXPECT_EQ(grand, 4.0);
  EXPECT_EQ(null, 0.0);
}

TEST(Game, BatchPreservesOrder) {
  const Game g = testing::two_player_game();
  EXPECT_TRUE(g.evaluate_batch({}, 0).empty());
  std::vector<Subset> all;
  for (std::uint64_t c = 0; c < 4; ++c) all.push_back(Subset::from_code(2, c));
  EXPECT_EQ(g.evaluate_batch(all, 0), (std::vector<double>{0.0, 1.0, 2.0, 4.0}));
  const Subset s = Subset::from_code(2, 1);
  const std::vector<Subset> twice{s, s};
  const auto v = g.evaluate_batch(twice, 0);
  EXPECT_EQ(v[0], v[1]);
}

TEST(Game, RejectsMismatchedInputs) {
  const Game g = testing::two_player_game();
  EXPECT_THROW(g.evaluate(Subset::full(3), 0), UsageError);
  EXPECT_THROW(g.evaluate(Subset::full(2), 1), UsageError);
  EXPECT_THROW(Game::tabular(2, 1, {1.0, 2.0}), UsageError);
}

TEST(Game, TabularJsonRoundTrip) {
  const Game g = Game::tabular(2, 2, {0, 1, 2, 3, 4, 5, 6, 7});
  const auto j = tabular_to_json(g);
  EXPECT_EQ(j.at("d"), 2);
  EXPECT_EQ(j.at("classes"), 2);
  EXPECT_EQ(j.at("values").size(), 8u);
  const Game back = tabular_from_json(j);
  EXPECT_EQ(back.evaluate(Subset::from_code(2, 3), 1), 7.0);
  EXPECT_THROW(tabular_from_json({{"d", 2}, {"classes", 1}, {"values", {1, 2}}}), UsageError);
}

class ModelGame : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(4);
    weights_ = std::make_shared<ViTWeights>(ViTWeights::init(ViTConfig::mini(), rng));
    image_ = Image(8, 16, 1);
    for (double& v : image_.pixels) v = rng.normal();
  }
  std::shared_ptr<ViTWeights> weights_;
  Image image_;
};

TEST_F(ModelGame, FullCoalitionIsUnmaskedPrediction) {
  const Game g = Game::model(weights_, image_);
  const auto full = forward_full(*weights_, image_);
  EXPECT_EQ(g.evaluate_all(Subset::full(8)), full);
}

TEST_F(ModelGame, MatchesMaskedForwardBitForBit) {
  const Game g = Game::model(weights_, image_);
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    const Subset s = Subset::from_code(8, rng.below(256));
    const auto probs = forward_masked(*weights_, image_, s);
    for (std::size_t y = 0; y < 4; ++y) EXPECT_EQ(g.evaluate(s, y), probs[y]);
  }
}

TEST_F(ModelGame, ProbabilitiesOnSimplexIncludingEmptyCoalition) {
  const Game g = Game::model(weights_, image_);
  for (std::uint64_t code = 0; code < 256; ++code) {
    const auto p = g.evaluate_all(Subset::from_code(8, code));
    double total = 0.0;
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST_F(ModelGame, PureAndTabulatesBitExactly) {
  const Game g = Game::model(weights_, image_);
  const Game t = tabulate(g);
  for (std::uint64_t code = 0; code < 256; ++code) {
    const Subset s = Subset::from_code(8, code);
    EXPECT_EQ(g.evaluate_all(s), g.evaluate_all(s));
    EXPECT_EQ(t.evaluate_all(s), g.evaluate_all(s));
  }
}

}  // namespace
}  // namespace shapkit
