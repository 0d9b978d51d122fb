#pragma once

// Explanation-quality metrics: insertion/deletion curves, sensitivity-n,
// faithfulness, and ROAR-style accuracy curves.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "shapkit/dataset.hpp"
#include "shapkit/game.hpp"
#include "shapkit/rng.hpp"
#include "shapkit/vit.hpp"

namespace shapkit {

enum class CurveDirection { insert, remove };

struct Curve {
  std::vector<std::pair<double, double>> points;  // (fraction, value), d + 1 points
  double auc = 0.0;                                // trapezoid over fraction
};

// Patches ordered by descending score (ties by ascending index). Insertion
// starts from v(0) and adds one patch per step; deletion starts from v(1).
Curve insertion_deletion(const Game& game, std::size_t y, std::span<const double> attribution,
                         CurveDirection direction);

// Pearson correlation; nullopt when either side has zero variance.
std::optional<double> pearson(std::span<const double> a, std::span<const double> b);

// Corr(s^T phi, v(1) - v(1 - s)) over `samples` subsets of cardinality n.
std::optional<double> sensitivity_n(const Game& game, std::size_t y,
                                    std::span<const double> attribution, std::size_t n,
                                    std::size_t samples, Rng& rng);

// Same correlation with s drawn from the uniform-cardinality distribution.
std::optional<double> faithfulness(const Game& game, std::size_t y,
                                   std::span<const double> attribution, std::size_t samples,
                                   Rng& rng);

enum class RoarStrategy {
  evaluate_surrogate,         // (a) mask top patches, evaluate the surrogate
  evaluate_masked_model,      // (b) same with a classifier trained under random masking
  retrain,                    // (c) retrain a fresh classifier on masked data
  retrain_without_positions,  // (d) as (c) without positional embeddings
};

std::string roar_strategy_name(RoarStrategy strategy);
RoarStrategy parse_roar_strategy(const std::string& name);

struct RoarSplit {
  std::span<const LabeledExample> examples;
  std::span<const std::vector<double>> attributions;  // true-class scores per example
};

struct RoarOptions {
  const ViTWeights* evaluator = nullptr;  // strategies (a) and (b)
  ViTConfig config;                       // retraining architecture, (c) and (d)
  TrainSchedule schedule;                 // retraining schedule, (c) and (d)
  RoarSplit train;                        // retraining data, (c) and (d)
};

struct RoarPoint {
  std::size_t k = 0;
  double accuracy = 0.0;
};

// The subset that keeps everything except the k top-scored patches.
Subset remove_top_k(std::span<const double> attribution, std::size_t k);

// For each k, removes each example's k top-attributed patches (by
// attention masking) and reports held-out accuracy on `test`.
std::vector<RoarPoint> roar_curve(RoarStrategy strategy, const RoarSplit& test,
                                  std::span<const std::size_t> k_list,
                                  const RoarOptions& options);

}  // namespace shapkit
