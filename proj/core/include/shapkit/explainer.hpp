#pragma once

// Amortized Shapley explainer: a ViT backbone plus a head (one extra
// attention block, then three fully-connected layers of width 4h) mapping
// each patch token to K raw scores, followed by the additive efficient
// normalization.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shapkit/attribution.hpp"
#include "shapkit/game.hpp"
#include "shapkit/image.hpp"
#include "shapkit/rng.hpp"
#include "shapkit/subset.hpp"
#include "shapkit/tensor.hpp"
#include "shapkit/vit.hpp"

namespace shapkit {

struct ExplainerModel {
  ViTWeights backbone;
  BlockWeights head_block;
  tk::Tensor fc1_weight, fc1_bias;  // h -> 4h
  tk::Tensor fc2_weight, fc2_bias;  // 4h -> 4h
  tk::Tensor fc3_weight, fc3_bias;  // 4h -> K
  bool use_tanh = true;

  // Backbone copied from `backbone`; head drawn from rng.
  static ExplainerModel init(const ViTWeights& backbone, bool use_tanh, Rng& rng);

  std::size_t players() const { return backbone.config.patches(); }
  std::size_t classes() const { return backbone.config.classes; }

  std::vector<NamedTensor> named_parameters() const;
  std::vector<tk::Tensor> parameters() const;
  ExplainerModel clone() const;

  nlohmann::json metadata() const;
  void save(const std::filesystem::path& path) const;
  static ExplainerModel load(const std::filesystem::path& path);
  static ExplainerModel from_checkpoint(const Checkpoint& ckpt);
};

// [d x K] raw head outputs (tanh applied when enabled), class token dropped.
tk::Tensor explainer_raw(const ExplainerModel& model, const Image& image);

// phi + 1 (target - 1^T phi) / d per class column. raw is [d x K], target
// holds v(1) - v(0) per class.
tk::Tensor normalize_efficient(const tk::Tensor& raw, std::span<const double> target);
std::vector<double> normalize_efficient(std::span<const double> raw, std::size_t d,
                                        std::size_t classes, std::span<const double> target);

// [d x K] normalized attributions.
tk::Tensor explainer_forward(const ExplainerModel& model, const Image& image,
                             std::span<const double> target);

// Mean over subsets and classes of (v_y(s) - v_y(0) - s^T phi_y)^2.
// `values` is [m x K] of v_y(s_j) - v_y(0).
tk::Tensor explainer_loss(const tk::Tensor& phi, std::span<const Subset> subsets,
                          std::span<const double> values);

// Same loss with the targets evaluated from `game` for class y only.
tk::Tensor explainer_loss(const ExplainerModel& model, const Game& game, const Image& image,
                          std::size_t y, std::span<const Subset> subsets);

// v(1) - v(0) for every class.
std::vector<double> grand_minus_null(const Game& game);

// One attribution per class, normalized, with efficiency gaps filled in.
std::vector<Attribution> explain(const ExplainerModel& model, const Image& image,
                                 const Game& game);
std::vector<Attribution> explain(const ExplainerModel& model, const Image& image,
                                 std::span<const double> grand, std::span<const double> null);

struct ValidationInput {
  Image image;
  std::vector<double> grand;  // v(1) per class
  std::vector<double> null;   // v(0) per class
};

struct ValidationTuple {
  std::size_t input = 0;
  std::size_t y = 0;
  Subset subset;
  double value = 0.0;  // v_y(s)
  double null = 0.0;   // v_y(0)
  double grand = 0.0;  // v_y(1)

  // Rejects the empty and full subsets, which have zero Shapley-kernel mass.
  static ValidationTuple make(std::size_t input, std::size_t y, Subset subset, double value,
                              double null, double grand);
};

struct ValidationSet {
  std::vector<ValidationInput> inputs;
  std::vector<ValidationTuple> tuples;
};

// For each input, `pairs` paired Shapley-kernel draws; one tuple per
// (subset, class).
ValidationSet make_validation_set(std::span<const Game> games, std::span<const Image> images,
                                  std::size_t pairs, Rng& rng);

double validation_loss(const ExplainerModel& model, const ValidationSet& set);

struct ExplainerSchedule {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  std::size_t subsets_per_example = 16;  // m; even when paired
  bool paired = true;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static ExplainerSchedule from_json(const nlohmann::json& j);
};

struct ExplainerEpoch {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;  // NaN without a validation set
};

struct ExplainerTrace {
  std::vector<ExplainerEpoch> epochs;
  std::size_t best_epoch = 0;  // 1-based; 0 means the initialization was kept

  // epoch,train_loss,validation_loss
  std::string to_csv() const;
};

struct ExplainerReport {
  ExplainerModel model;
  ExplainerTrace trace;
};

// Games and images are indexed together; all games share d and K. The
// returned model is the epoch with the lowest validation loss (the last
// epoch when `validation` is empty).
ExplainerReport train_explainer(const ExplainerModel& init, std::span<const Game> games,
                                std::span<const Image> images, const ExplainerSchedule& schedule,
                                const ValidationSet* validation = nullptr);

}  // namespace shapkit
