#include "shapkit/surrogate.hpp"

#include <cmath>
#include <sstream>
#include <vector>

#include "gtest/gtest.h"
#include "oracles.hpp"
#include "shapkit/errors.hpp"
#include "shapkit/sampling.hpp"

namespace shapkit {
namespace {

class SurrogateFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    config_ = ViTConfig::mini();
    config_.embed = 16;
    config_.layers = 1;
    Rng rng(21);
    teacher_ = ViTWeights::init(config_, rng);
    for (std::size_t i = 0; i < 24; ++i) {
      LabeledExample ex;
      ex.image = Image(config_.height, config_.width, 1);
      for (double& v : ex.image.pixels) v = rng.normal();
      ex.label = i % config_.classes;
      examples_.push_back(std::move(ex));
    }
  }

  std::vector<Image> images() const { return images_of(examples_); }

  ViTConfig config_;
  ViTWeights teacher_;
  std::vector<LabeledExample> examples_;
};

TEST(KlValue, HandComputed) {
  const std::vector<double> p = {0.5, 0.5};
  const std::vector<double> q = {0.25, 0.75};
  EXPECT_NEAR(kl_value(p, q), 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0), 1e-15);
  EXPECT_EQ(kl_value(p, p), 0.0);
  EXPECT_THROW(kl_value(p, std::vector<double>{1.0}), UsageError);
}

TEST(RemovalModes, NamesRoundTrip) {
  for (RemovalMode m : {RemovalMode::attention_mask, RemovalMode::post_softmax,
                        RemovalMode::zero_input, RemovalMode::zero_embedding,
                        RemovalMode::random_replacement}) {
    EXPECT_EQ(parse_removal_mode(removal_mode_name(m)), m);
  }
  EXPECT_THROW(parse_removal_mode("blur"), UsageError);
}

TEST_F(SurrogateFixture, LossIsZeroAgainstOwnFullPrediction) {
  const auto& image = examples_[0].image;
  const auto p = forward_full(teacher_, image);
  EXPECT_NEAR(surrogate_loss(teacher_, p, image, Subset::full(8)).item(), 0.0, 1e-14);
  const Subset s = Subset::from_code(8, 0b00001111);
  EXPECT_NEAR(surrogate_loss(teacher_, p, image, s).item(),
              kl_value(p, forward_masked(teacher_, image, s)), 1e-12);
}

TEST_F(SurrogateFixture, ZeroEpochsClonesTeacher) {
  TrainSchedule schedule;
  schedule.epochs = 0;
  const auto r = finetune_surrogate(teacher_, images(), schedule);
  for (const auto& ex : examples_) {
    EXPECT_EQ(forward_masked(r.weights, ex.image, Subset::from_code(8, 0b1011)),
              forward_masked(teacher_, ex.image, Subset::from_code(8, 0b1011)));
  }
}

TEST_F(SurrogateFixture, FinetuningReducesMaskedKl) {
  const auto imgs = images();
  const auto dist = SubsetDistribution::uniform_cardinality(8);
  Rng rng(3);
  std::vector<Subset> subsets = dist.sample(rng, imgs.size());
  auto masked_kl = [&](const ViTWeights& w) {
    double total = 0.0;
    for (std::size_t i = 0; i < imgs.size(); ++i) {
      total += kl_value(forward_full(teacher_, imgs[i]), forward_masked(w, imgs[i], subsets[i]));
    }
    return total / imgs.size();
  };
  TrainSchedule schedule;
  schedule.epochs = 8;
  schedule.batch_size = 8;
  schedule.learning_rate = 3e-3;
  const auto r = finetune_surrogate(teacher_, imgs, schedule);
  EXPECT_LT(masked_kl(r.weights), masked_kl(teacher_));
  EXPECT_EQ(r.epoch_loss.size(), 8u);
}

TEST_F(SurrogateFixture, RemovalPredictMatchesDirectConstructions) {
  const Image& image = examples_[1].image;
  const Image& donor = examples_[2].image;
  const Subset s = Subset::from_code(8, 0b01100101);
  EXPECT_EQ(removal_predict(teacher_, image, s, RemovalMode::attention_mask),
            forward_masked(teacher_, image, s));

  Image zeroed = image;
  Image replaced = image;
  for (std::size_t i = 0; i < 8; ++i) {
    if (s[i]) continue;
    fill_patch(zeroed, i, config_.patch, 0.0);
    copy_patch(donor, replaced, i, config_.patch);
  }
  EXPECT_EQ(removal_predict(teacher_, image, s, RemovalMode::zero_input), forward_full(teacher_, zeroed));
  EXPECT_EQ(removal_predict(teacher_, image, s, RemovalMode::random_replacement, &donor),
            forward_full(teacher_, replaced));
  EXPECT_THROW(removal_predict(teacher_, image, s, RemovalMode::random_replacement), UsageError);

  const Subset full = Subset::full(8);
  const auto reference = forward_full(teacher_, image);
  for (RemovalMode m : {RemovalMode::post_softmax, RemovalMode::zero_input,
                        RemovalMode::zero_embedding}) {
    const auto p = removal_predict(teacher_, image, full, m);
    for (std::size_t k = 0; k < p.size(); ++k) EXPECT_NEAR(p[k], reference[k], 1e-14);
  }
}

TEST_F(SurrogateFixture, RemovalCurveShapeAndDeterminism) {
  const std::vector<double> fractions = {0.0, 0.5, 1.0};
  const auto curve = removal_curve(teacher_, RemovalMode::attention_mask, examples_, fractions);
  ASSERT_EQ(curve.size(), 3u);
  EXPECT_EQ(curve[0].mean_kl, 0.0);
  EXPECT_GT(curve[1].mean_kl, 0.0);
  for (const auto& p : curve) {
    EXPECT_GE(p.top1, 0.0);
    EXPECT_LE(p.top1, 1.0);
    EXPECT_GE(p.kl_std_error, 0.0);
  }
  const auto again = removal_curve(teacher_, RemovalMode::attention_mask, examples_, fractions);
  EXPECT_EQ(removal_curve_csv(again), removal_curve_csv(curve));

  std::istringstream csv(removal_curve_csv(curve));
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "fraction,mean_kl,kl_stderr,top1");
}

TEST_F(SurrogateFixture, RemovalCurveUsesReferenceModel) {
  Rng rng(5);
  const ViTWeights other = ViTWeights::init(config_, rng);
  RemovalCurveOptions options;
  options.reference = &other;
  const std::vector<double> fractions = {0.0};
  const auto curve = removal_curve(teacher_, RemovalMode::attention_mask, examples_, fractions, options);
  double expected = 0.0;
  for (const auto& ex : examples_) {
    expected += kl_value(forward_full(other, ex.image), forward_full(teacher_, ex.image));
  }
  EXPECT_NEAR(curve[0].mean_kl, expected / examples_.size(), 1e-12);
}

TEST_F(SurrogateFixture, RemovalCurveRejectsBadArguments) {
  const std::vector<double> bad = {1.5};
  EXPECT_THROW(removal_curve(teacher_, RemovalMode::attention_mask, examples_, bad), UsageError);
  const std::vector<double> ok = {0.5};
  EXPECT_THROW(removal_curve(teacher_, RemovalMode::random_replacement, examples_, ok), UsageError);
  EXPECT_THROW(removal_curve(teacher_, RemovalMode::attention_mask, {}, ok), UsageError);
}

}  // namespace
}  // namespace shapkit
