#pragma once

// Coalitional games v(s) with one value per output class.

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "shapkit/image.hpp"
#include "shapkit/subset.hpp"

namespace shapkit {

struct ViTWeights;

class GameBackend {
 public:
  virtual ~GameBackend() = default;
  virtual std::size_t players() const = 0;
  virtual std::size_t classes() const = 0;
  // Values for every class at subset s (already validated).
  virtual std::vector<double> values(const Subset& s) const = 0;
  virtual std::string kind() const = 0;
};

// Immutable handle; copies share the backend and are safe to evaluate
// concurrently.
class Game {
 public:
  Game() = default;
  explicit Game(std::shared_ptr<const GameBackend> backend) : backend_(std::move(backend)) {}

  // values has length 2^d * K; entry (code * K + y) is v(s_code) for class y.
  static Game tabular(std::size_t players, std::size_t classes, std::vector<double> values);
  // v_y(s) = base[y] + sum_i s_i * weights[y][i].
  static Game additive(std::vector<std::vector<double>> weights, std::vector<double> base);
  static Game additive(std::vector<double> weights, double base);
  // Class probabilities of the attention-masked classifier on `image`.
  static Game model(std::shared_ptr<const ViTWeights> weights, Image image);

  std::size_t players() const { return backend_->players(); }
  std::size_t classes() const { return backend_->classes(); }
  std::string kind() const { return backend_->kind(); }
  const GameBackend& backend() const { return *backend_; }

  double evaluate(const Subset& s, std::size_t y) const;
  std::vector<double> evaluate_all(const Subset& s) const;
  // Order-preserving; element i equals evaluate(subsets[i], y).
  std::vector<double> evaluate_batch(std::span<const Subset> subsets, std::size_t y) const;
  std::vector<std::vector<double>> evaluate_batch_all(std::span<const Subset> subsets) const;

  // (v(1), v(0)) for class y.
  std::pair<double, double> grand_and_null(std::size_t y) const;

 private:
  void check(const Subset& s) const;
  std::shared_ptr<const GameBackend> backend_;
};

class TabularBackend : public GameBackend {
 public:
  TabularBackend(std::size_t players, std::size_t classes, std::vector<double> values);
  std::size_t players() const override { return players_; }
  std::size_t classes() const override { return classes_; }
  std::vector<double> values(const Subset& s) const override;
  std::string kind() const override { return "tabular"; }
  const std::vector<double>& table() const { return values_; }

 private:
  std::size_t players_;
  std::size_t classes_;
  std::vector<double> values_;
};

// Evaluates every subset of a game (d <= 20) into a tabular game. Values are
// bit-identical to the source game's.
Game tabulate(const Game& game);

// Tabular JSON: {"d": int, "classes": int, "values": [...]}.
nlohmann::json tabular_to_json(const Game& game);
Game tabular_from_json(const nlohmann::json& j);
Game load_tabular_game(const std::filesystem::path& path);
void save_tabular_game(const Game& game, const std::filesystem::path& path);

}  // namespace shapkit
