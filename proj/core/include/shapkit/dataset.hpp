#pragma once

// Synthetic planted-patch classification data. Each image is Gaussian
// background noise with a class-specific template added to a few randomly
// chosen patches, so the informative patches are known by construction.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "shapkit/image.hpp"

namespace shapkit {

struct PlantedConfig {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 1;
  std::size_t patch = 4;
  std::size_t classes = 4;
  std::size_t signal_patches = 2;
  double amplitude = 2.0;
  double noise = 0.5;
  std::size_t train_size = 2000;
  std::size_t val_size = 400;
  std::size_t test_size = 400;
  std::uint64_t seed = 0;

  std::size_t patches() const { return (height / patch) * (width / patch); }
  void validate() const;

  nlohmann::json to_json() const;
  static PlantedConfig from_json(const nlohmann::json& j);
};

struct LabeledExample {
  Image image;
  std::size_t label = 0;
  std::vector<std::size_t> signal;  // sorted patch indices carrying the template

  friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

struct Dataset {
  PlantedConfig config;
  std::vector<Image> templates;  // one patch-sized template per class
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> val;
  std::vector<LabeledExample> test;
};

Dataset generate_dataset(const PlantedConfig& config);

// Per-class templates: +/-1 patterns derived from the config seed.
std::vector<Image> class_templates(const PlantedConfig& config);

// "SHPD1" | u64 LE header length | JSON header {config, splits} |
// f64 LE pixels (train, val, test) | u8 labels | per example: u8 count, u8 indices.
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// Fraction of the top_k highest-scoring patches (ties broken by lower
// index) that are signal patches, normalized by min(top_k, |signal|).
double hit_rate(std::span<const double> attribution, const LabeledExample& example,
                std::size_t top_k);

// Patch indices sorted by descending score, ties by ascending index.
std::vector<std::size_t> rank_patches(std::span<const double> scores);

std::vector<Image> images_of(std::span<const LabeledExample> examples);

}  // namespace shapkit
