#include "shapkit/explainer.hpp"

#include <cmath>
#include <vector>

#include "gtest/gtest.h"
#include "shapkit/errors.hpp"

namespace shapkit {
namespace {

ViTConfig tiny_config() {
  ViTConfig c = ViTConfig::mini();
  c.embed = 16;
  c.layers = 1;
  return c;
}

Image random_image(const ViTConfig& c, Rng& rng) {
  Image im(c.height, c.width, c.channels);
  for (double& v : im.pixels) v = rng.normal();
  return im;
}

// Additive game whose per-class weights are read off the image, so each
// input has a different exact attribution.
Game image_game(const Image& image, std::size_t classes) {
  std::vector<std::vector<double>> w(classes, std::vector<double>(8));
  std::vector<double> base(classes);
  for (std::size_t y = 0; y < classes; ++y) {
    base[y] = 0.1 * y;
    for (std::size_t i = 0; i < 8; ++i) w[y][i] = 0.2 * image.pixels[(i * 4 + y) % image.pixels.size()];
  }
  return Game::additive(w, base);
}

TEST(NormalizeEfficient, ColumnsSumToTargets) {
  Rng rng(1);
  std::vector<double> raw(5 * 3);
  for (double& v : raw) v = rng.normal();
  const std::vector<double> target = {1.0, -2.0, 0.5};
  const auto phi = normalize_efficient(raw, 5, 3, target);
  for (std::size_t y = 0; y < 3; ++y) {
    double sum = 0.0;
    for (std::size_t i = 0; i < 5; ++i) sum += phi[i * 3 + y];
    EXPECT_NEAR(sum, target[y], 1e-14);
  }
  const auto t = normalize_efficient(tk::Tensor::from({5, 3}, raw), target);
  for (std::size_t i = 0; i < raw.size(); ++i) EXPECT_NEAR(t.data()[i], phi[i], 1e-15);
  // Already-efficient input is a fixed point.
  const auto again = normalize_efficient(phi, 5, 3, target);
  for (std::size_t i = 0; i < raw.size(); ++i) EXPECT_NEAR(again[i], phi[i], 1e-14);
  EXPECT_THROW(normalize_efficient(raw, 5, 3, std::vector<double>{1.0}), UsageError);
}

TEST(ExplainerLoss, HandComputed) {
  // d = 2, K = 1, phi = (1, 2).
  const tk::Tensor phi = tk::Tensor::from({2, 1}, {1.0, 2.0});
  const std::vector<Subset> subsets = {Subset::from_code(2, 1), Subset::from_code(2, 2)};
  const std::vector<double> values = {3.0, 2.0};
  EXPECT_DOUBLE_EQ(explainer_loss(phi, subsets, values).item(), 2.0);
  EXPECT_THROW(explainer_loss(phi, {}, {}), UsageError);
  EXPECT_THROW(explainer_loss(phi, subsets, std::vector<double>{1.0}), UsageError);
}

TEST(ExplainerLoss, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  std::vector<Subset> subsets;
  std::vector<double> values;
  for (int j = 0; j < 6; ++j) {
    subsets.push_back(Subset::from_code(4, 1 + rng.below(14)));
    for (int y = 0; y < 3; ++y) values.push_back(rng.normal());
  }
  std::vector<double> start(12);
  for (double& v : start) v = rng.normal();
  const double err = tk::finite_difference_check(
      [&](const tk::Tensor& phi) { return explainer_loss(phi, subsets, values); },
      tk::Tensor::from({4, 3}, start));
  EXPECT_LT(err, 1e-6);
}

class ExplainerFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    config_ = tiny_config();
    Rng rng(3);
    backbone_ = ViTWeights::init(config_, rng);
    model_ = ExplainerModel::init(backbone_, true, rng);
    for (int i = 0; i < 16; ++i) {
      images_.push_back(random_image(config_, rng));
      games_.push_back(image_game(images_.back(), config_.classes));
    }
  }
  ViTConfig config_;
  ViTWeights backbone_;
  ExplainerModel model_;
  std::vector<Image> images_;
  std::vector<Game> games_;
};

TEST_F(ExplainerFixture, OutputsAreEfficient) {
  for (std::size_t e = 0; e < 4; ++e) {
    const auto attrs = explain(model_, images_[e], games_[e]);
    ASSERT_EQ(attrs.size(), config_.classes);
    for (std::size_t y = 0; y < attrs.size(); ++y) {
      EXPECT_EQ(attrs[y].values.size(), 8u);
      EXPECT_EQ(attrs[y].class_index, y);
      EXPECT_EQ(attrs[y].method, "explainer");
      EXPECT_LT(attrs[y].efficiency_gap, 1e-12);
    }
  }
}

TEST_F(ExplainerFixture, TanhBoundsRawScores) {
  const auto raw = explainer_raw(model_, images_[0]);
  EXPECT_EQ(raw.rows(), 8u);
  EXPECT_EQ(raw.cols(), config_.classes);
  for (double v : raw.data()) EXPECT_LE(std::abs(v), 1.0);
}

TEST_F(ExplainerFixture, SaveLoadRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "shapkit_explainer_test.ckpt";
  model_.save(path);
  const auto back = ExplainerModel::load(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.use_tanh, model_.use_tanh);
  const auto a = explain(model_, images_[0], games_[0]);
  const auto b = explain(back, images_[0], games_[0]);
  for (std::size_t y = 0; y < a.size(); ++y) EXPECT_EQ(a[y].values, b[y].values);
}

TEST_F(ExplainerFixture, ClassifierCheckpointIsNotAnExplainer) {
  const auto path = std::filesystem::temp_directory_path() / "shapkit_backbone_test.ckpt";
  backbone_.save(path);
  EXPECT_THROW(ExplainerModel::load(path), UsageError);
  std::filesystem::remove(path);
}

TEST_F(ExplainerFixture, ValidationSetShape) {
  Rng rng(4);
  const auto set = make_validation_set(games_, images_, 3, rng);
  EXPECT_EQ(set.inputs.size(), games_.size());
  EXPECT_EQ(set.tuples.size(), games_.size() * 6 * config_.classes);
  for (const auto& t : set.tuples) {
    EXPECT_GT(t.subset.cardinality(), 0u);
    EXPECT_LT(t.subset.cardinality(), 8u);
    EXPECT_EQ(t.value, games_[t.input].evaluate(t.subset, t.y));
  }
  EXPECT_GT(validation_loss(model_, set), 0.0);
  EXPECT_THROW(validation_loss(model_, ValidationSet{}), UsageError);
  EXPECT_THROW(ValidationTuple::make(0, 0, Subset::full(8), 0, 0, 0), UsageError);
  EXPECT_THROW(ValidationTuple::make(0, 0, Subset::empty(8), 0, 0, 0), UsageError);
}

TEST_F(ExplainerFixture, ScheduleValidation) {
  ExplainerSchedule s;
  s.subsets_per_example = 3;
  EXPECT_THROW(s.validate(), UsageError);
  s.paired = false;
  EXPECT_NO_THROW(s.validate());
  s.batch_size = 0;
  EXPECT_THROW(s.validate(), UsageError);
  EXPECT_EQ(ExplainerSchedule::from_json(ExplainerSchedule{}.to_json()).to_json(),
            ExplainerSchedule{}.to_json());
}

TEST_F(ExplainerFixture, TrainingReducesValidationLossAndKeepsBest) {
  Rng rng(5);
  const auto set = make_validation_set(games_, images_, 4, rng);
  ExplainerSchedule schedule;
  schedule.epochs = 4;
  schedule.batch_size = 4;
  schedule.subsets_per_example = 8;
  schedule.learning_rate = 2e-3;
  const auto report = train_explainer(model_, games_, images_, schedule, &set);
  ASSERT_EQ(report.trace.epochs.size(), 4u);
  const double init_loss = validation_loss(model_, set);
  double best = init_loss;
  for (const auto& e : report.trace.epochs) best = std::min(best, e.validation_loss);
  EXPECT_LT(best, init_loss);
  EXPECT_DOUBLE_EQ(validation_loss(report.model, set), best);
  EXPECT_GE(report.trace.best_epoch, 1u);

  const auto again = train_explainer(model_, games_, images_, schedule, &set);
  EXPECT_EQ(again.trace.to_csv(), report.trace.to_csv());
}

TEST_F(ExplainerFixture, ZeroEpochsKeepsInitialization) {
  ExplainerSchedule schedule;
  schedule.epochs = 0;
  const auto report = train_explainer(model_, games_, images_, schedule);
  EXPECT_TRUE(report.trace.epochs.empty());
  EXPECT_EQ(report.trace.best_epoch, 0u);
  EXPECT_EQ(explain(report.model, images_[0], games_[0])[0].values,
            explain(model_, images_[0], games_[0])[0].values);
}

TEST_F(ExplainerFixture, RejectsMismatchedGames) {
  std::vector<Game> wrong = {Game::additive({1.0, 2.0}, 0.0)};
  std::vector<Image> one = {images_[0]};
  EXPECT_THROW(train_explainer(model_, wrong, one, {}), UsageError);
  EXPECT_THROW(explain(model_, images_[0], wrong[0]), UsageError);
}

}  // namespace
}  // namespace shapkit
