#include "shapkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "shapkit/errors.hpp"
#include "shapkit/sampling.hpp"

namespace shapkit {

Curve insertion_deletion(const Game& game, std::size_t y, std::span<const double> attribution,
                         CurveDirection direction) {
  const std::size_t d = game.players();
  if (attribution.size() != d) throw UsageError("attribution length must equal d");
  const auto order = rank_patches(attribution);
  const bool insert = direction == CurveDirection::insert;
  Subset s(d, !insert);
  std::vector<Subset> subsets{s};
  for (std::size_t step = 0; step < d; ++step) {
    s.set(order[step], insert);
    subsets.push_back(s);
  }
  const auto values = game.evaluate_batch(subsets, y);
  Curve curve;
  const double dd = static_cast<double>(d);
  for (std::size_t k = 0; k <= d; ++k) {
    curve.points.emplace_back(static_cast<double>(k) / dd, values[k]);
  }
  for (std::size_t k = 0; k < d; ++k) curve.auc += 0.5 * (values[k] + values[k + 1]) / dd;
  return curve;
}

std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw UsageError("pearson: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) return std::nullopt;
  double ma = 0.0;
  double mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return std::nullopt;
  const double r = sab / std::sqrt(saa * sbb);
  return std::clamp(r, -1.0, 1.0);
}

namespace {

std::optional<double> drop_correlation(const Game& game, std::size_t y,
                                       std::span<const double> attribution,
                                       const std::vector<Subset>& subsets) {
  const std::size_t d = game.players();
  if (attribution.size() != d) throw UsageError("attribution length must equal d");
  std::vector<Subset> kept;
  kept.reserve(subsets.size());
  for (const auto& s : subsets) kept.push_back(s.complement());
  const double grand = game.evaluate(Subset::full(d), y);
  const auto values = game.evaluate_batch(kept, y);
  std::vector<double> sums(subsets.size());
  std::vector<double> drops(subsets.size());
  for (std::size_t j = 0; j < subsets.size(); ++j) {
    double total = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      if (subsets[j][i]) total += attribution[i];
    }
    sums[j] = total;
    drops[j] = grand - values[j];
  }
  return pearson(sums, drops);
}

}  // namespace

std::optional<double> sensitivity_n(const Game& game, std::size_t y,
                                    std::span<const double> attribution, std::size_t n,
                                    std::size_t samples, Rng& rng) {
  const std::size_t d = game.players();
  if (n < 1 || n + 1 > d) throw UsageError("sensitivity_n needs 1 <= n <= d - 1");
  if (samples < 2) throw UsageError("sensitivity_n needs at least 2 samples");
  return drop_correlation(game, y, attribution,
                          SubsetDistribution::fixed_cardinality(d, n).sample(rng, samples));
}

std::optional<double> faithfulness(const Game& game, std::size_t y,
                                   std::span<const double> attribution, std::size_t samples,
                                   Rng& rng) {
  if (samples < 2) throw UsageError("faithfulness needs at least 2 samples");
  const std::size_t d = game.players();
  return drop_correlation(game, y, attribution,
                          SubsetDistribution::uniform_cardinality(d).sample(rng, samples));
}

std::string roar_strategy_name(RoarStrategy strategy) {
  switch (strategy) {
    case RoarStrategy::evaluate_surrogate: return "surrogate";
    case RoarStrategy::evaluate_masked_model: return "masked_model";
    case RoarStrategy::retrain: return "retrain";
    case RoarStrategy::retrain_without_positions: return "retrain_no_position";
  }
  return "unknown";
}

RoarStrategy parse_roar_strategy(const std::string& name) {
  for (RoarStrategy s : {RoarStrategy::evaluate_surrogate, RoarStrategy::evaluate_masked_model,
                         RoarStrategy::retrain, RoarStrategy::retrain_without_positions}) {
    if (roar_strategy_name(s) == name) return s;
  }
  throw UsageError("unknown ROAR strategy '" + name + "'");
}

Subset remove_top_k(std::span<const double> attribution, std::size_t k) {
  const std::size_t d = attribution.size();
  if (k > d) throw UsageError("remove_top_k: k exceeds d");
  const auto order = rank_patches(attribution);
  Subset s = Subset::full(d);
  for (std::size_t j = 0; j < k; ++j) s.set(order[j], false);
  return s;
}

namespace {

std::vector<Subset> masks_for(const RoarSplit& split, std::size_t k) {
  if (split.examples.size() != split.attributions.size()) {
    throw UsageError("ROAR: one attribution per example required");
  }
  std::vector<Subset> out;
  out.reserve(split.examples.size());
  for (const auto& a : split.attributions) out.push_back(remove_top_k(a, k));
  return out;
}

}  // namespace

std::vector<RoarPoint> roar_curve(RoarStrategy strategy, const RoarSplit& test,
                                  std::span<const std::size_t> k_list,
                                  const RoarOptions& options) {
  const bool retrain = strategy == RoarStrategy::retrain ||
                       strategy == RoarStrategy::retrain_without_positions;
  if (!retrain && options.evaluator == nullptr) {
    throw UsageError("ROAR evaluation strategies need an evaluator model");
  }
  std::vector<RoarPoint> out;
  for (std::size_t k : k_list) {
    const auto test_masks = masks_for(test, k);
    RoarPoint point;
    point.k = k;
    if (!retrain) {
      point.accuracy = evaluate_classifier(*options.evaluator, test.examples, test_masks).accuracy;
    } else {
      ViTConfig config = options.config;
      if (strategy == RoarStrategy::retrain_without_positions) config.positional = false;
      const auto train_masks = masks_for(options.train, k);
      try {
        const auto report = train_classifier(options.train.examples, test.examples, config,
                                             options.schedule, TrainMasking::none, nullptr,
                                             train_masks, test_masks);
        point.accuracy = report.validation_accuracy;
      } catch (const TrainingError& e) {
        throw TrainingError(std::string("ROAR retraining diverged at k = ") + std::to_string(k) +
                                ": " + e.what(),
                            e.step());
      }
    }
    out.push_back(point);
  }
  return out;
}

}  // namespace shapkit
