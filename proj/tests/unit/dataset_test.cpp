#include "shapkit/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <vector>

#include "gtest/gtest.h"
#include "oracles.hpp"
#include "shapkit/errors.hpp"
#include "shapkit/image.hpp"

namespace shapkit {
namespace {

PlantedConfig small_config() {
  PlantedConfig c;
  c.train_size = 400;
  c.val_size = 80;
  c.test_size = 400;
  c.seed = 3;
  return c;
}

// Mean pixel vector of the example's signal patches.
std::vector<double> signal_mean(const LabeledExample& ex, std::size_t patch) {
  const tk::Tensor patches = patchify(ex.image, patch);
  std::vector<double> out(patches.cols(), 0.0);
  for (std::size_t idx : ex.signal) {
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += patches.at(idx, j);
  }
  for (double& v : out) v /= static_cast<double>(ex.signal.size());
  return out;
}

// Class whose template best matches any patch of the image.
std::size_t nearest_template(const Image& image, const std::vector<Image>& templates,
                             std::size_t patch) {
  const tk::Tensor patches = patchify(image, patch);
  std::size_t best = 0;
  double best_score = -1e300;
  for (std::size_t y = 0; y < templates.size(); ++y) {
    for (std::size_t i = 0; i < patches.rows(); ++i) {
      double score = 0.0;
      for (std::size_t j = 0; j < patches.cols(); ++j) {
        score += patches.at(i, j) * templates[y].pixels[j];
      }
      if (score > best_score) {
        best_score = score;
        best = y;
      }
    }
  }
  return best;
}

TEST(Dataset, RegenerationIsBitIdentical) {
  const auto a = generate_dataset(small_config());
  const auto b = generate_dataset(small_config());
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.test, b.test);
}

TEST(Dataset, BalancedClassesAndValidSignalSets) {
  const auto data = generate_dataset(small_config());
  std::vector<int> counts(4, 0);
  for (const auto& ex : data.train) {
    ++counts[ex.label];
    ASSERT_EQ(ex.signal.size(), 2u);
    EXPECT_LT(ex.signal[0], ex.signal[1]);
    EXPECT_LT(ex.signal[1], 16u);
  }
  for (int c : counts) EXPECT_EQ(c, 100);
}

TEST(Dataset, SplitsDiffer) {
  const auto data = generate_dataset(small_config());
  EXPECT_NE(data.train.front().image, data.test.front().image);
}

TEST(Dataset, NoiselessSignalIsTemplate) {
  PlantedConfig c = small_config();
  c.noise = 0.0;
  const auto data = generate_dataset(c);
  std::size_t correct = 0;
  for (const auto& ex : data.test) {
    const auto mean = signal_mean(ex, c.patch);
    for (std::size_t j = 0; j < mean.size(); ++j) {
      EXPECT_EQ(mean[j], c.amplitude * data.templates[ex.label].pixels[j]);
    }
    correct += nearest_template(ex.image, data.templates, c.patch) == ex.label;
  }
  EXPECT_EQ(correct, data.test.size());
}

TEST(Dataset, ZeroAmplitudeCarriesNoLabelInformation) {
  PlantedConfig c = small_config();
  c.amplitude = 0.0;
  c.test_size = 2000;
  const auto data = generate_dataset(c);
  std::vector<double> hits;
  for (const auto& ex : data.test) {
    hits.push_back(nearest_template(ex.image, data.templates, c.patch) == ex.label ? 1.0 : 0.0);
  }
  EXPECT_NEAR(testing::mean(hits), 0.25, 3.0 * std::sqrt(0.25 * 0.75 / 2000.0));
}

TEST(Dataset, LinearProbeOnSignalPatchesSeparatesClasses) {
  const PlantedConfig c = small_config();
  const auto data = generate_dataset(c);
  const std::size_t p = c.patch * c.patch;
  const std::size_t k = c.classes;
  // Multinomial logistic regression fit by full-batch gradient descent.
  std::vector<double> w(p * k, 0.0);
  std::vector<double> b(k, 0.0);
  auto scores = [&](const std::vector<double>& x) {
    std::vector<double> s(b);
    for (std::size_t y = 0; y < k; ++y) {
      for (std::size_t j = 0; j < p; ++j) s[y] += x[j] * w[j * k + y];
    }
    return s;
  };
  std::vector<std::vector<double>> features;
  for (const auto& ex : data.train) features.push_back(signal_mean(ex, c.patch));
  for (int iter = 0; iter < 200; ++iter) {
    std::vector<double> gw(p * k, 0.0);
    std::vector<double> gb(k, 0.0);
    for (std::size_t n = 0; n < features.size(); ++n) {
      auto s = scores(features[n]);
      double peak = s[0];
      for (double v : s) peak = std::max(peak, v);
      double z = 0.0;
      for (double& v : s) z += (v = std::exp(v - peak));
      for (std::size_t y = 0; y < k; ++y) {
        const double g = s[y] / z - (y == data.train[n].label ? 1.0 : 0.0);
        gb[y] += g;
        for (std::size_t j = 0; j < p; ++j) gw[j * k + y] += g * features[n][j];
      }
    }
    const double lr = 0.5 / static_cast<double>(features.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * gw[i];
    for (std::size_t y = 0; y < k; ++y) b[y] -= lr * gb[y];
  }
  std::size_t correct = 0;
  for (const auto& ex : data.test) {
    const auto s = scores(signal_mean(ex, c.patch));
    correct += static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin()) ==
               ex.label;
  }
  EXPECT_GT(static_cast<double>(correct) / static_cast<double>(data.test.size()), 0.95);
}

TEST(Dataset, FileRoundTrip) {
  const auto data = generate_dataset(small_config());
  const auto path = std::filesystem::temp_directory_path() / "shapkit_dataset_test.shpd";
  save_dataset(data, path);
  const auto loaded = load_dataset(path);
  EXPECT_EQ(loaded.train, data.train);
  EXPECT_EQ(loaded.val, data.val);
  EXPECT_EQ(loaded.test, data.test);
  EXPECT_EQ(loaded.config.to_json(), data.config.to_json());
  std::filesystem::remove(path);
}

TEST(Dataset, RejectsInvalidConfigs) {
  PlantedConfig c = small_config();
  c.train_size = 401;
  EXPECT_THROW(generate_dataset(c), UsageError);
  c = small_config();
  c.patch = 5;
  EXPECT_THROW(generate_dataset(c), UsageError);
  c = small_config();
  c.signal_patches = 0;
  EXPECT_THROW(generate_dataset(c), UsageError);
}

TEST(HitRate, IndicatorOfSignalScoresOne) {
  LabeledExample ex;
  ex.signal = {3, 9};
  std::vector<double> a(16, 0.0);
  a[3] = a[9] = 1.0;
  EXPECT_EQ(hit_rate(a, ex, 2), 1.0);
  EXPECT_EQ(hit_rate(a, ex, 4), 1.0);
  a[9] = 0.0;
  EXPECT_EQ(hit_rate(a, ex, 2), 0.5);
}

TEST(HitRate, TiesBrokenByLowerIndex) {
  LabeledExample ex;
  ex.signal = {0};
  const std::vector<double> a(8, 1.0);
  EXPECT_EQ(hit_rate(a, ex, 1), 1.0);
  EXPECT_EQ(rank_patches(std::vector<double>{0.5, 2.0, 0.5, 2.0}),
            (std::vector<std::size_t>{1, 3, 0, 2}));
}

TEST(HitRate, RandomAttributionAveragesSignalShare) {
  LabeledExample ex;
  ex.signal = {2, 11};
  Rng rng(8);
  std::vector<double> rates;
  for (int t = 0; t < 4000; ++t) {
    std::vector<double> a(16);
    for (double& v : a) v = rng.uniform();
    rates.push_back(hit_rate(a, ex, 2));
  }
  EXPECT_NEAR(testing::mean(rates), 2.0 / 16.0, 3.0 * testing::std_error(rates));
}

}  // namespace
}  // namespace shapkit
