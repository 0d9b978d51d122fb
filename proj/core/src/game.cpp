#include "shapkit/game.hpp"

#include <fstream>

#include "shapkit/errors.hpp"
#include "shapkit/parallel.hpp"
#include "shapkit/vit.hpp"

namespace shapkit {

namespace {

class AdditiveBackend : public GameBackend {
 public:
  AdditiveBackend(std::vector<std::vector<double>> weights, std::vector<double> base)
      : weights_(std::move(weights)), base_(std::move(base)) {
    if (weights_.empty() || weights_.size() != base_.size()) {
      throw UsageError("additive game: need one weight vector and base value per class");
    }
    for (const auto& w : weights_) {
      if (w.size() != weights_.front().size() || w.empty()) {
        throw UsageError("additive game: weight vectors must share a positive length");
      }
    }
  }
  std::size_t players() const override { return weights_.front().size(); }
  std::size_t classes() const override { return weights_.size(); }
  std::vector<double> values(const Subset& s) const override {
    std::vector<double> out(base_);
    for (std::size_t y = 0; y < out.size(); ++y) {
      for (std::size_t i = 0; i < s.players(); ++i) {
        if (s[i]) out[y] += weights_[y][i];
      }
    }
    return out;
  }
  std::string kind() const override { return "additive"; }

 private:
  std::vector<std::vector<double>> weights_;
  std::vector<double> base_;
};

class ModelBackend : public GameBackend {
 public:
  ModelBackend(std::shared_ptr<const ViTWeights> weights, Image image)
      : weights_(std::move(weights)), image_(std::move(image)) {
    if (!weights_) throw UsageError("model game: null weights");
    tk::NoGradGuard no_grad;
    embeddings_ = patch_embeddings(*weights_, image_);
  }
  std::size_t players() const override { return weights_->config.patches(); }
  std::size_t classes() const override { return weights_->config.classes; }
  std::vector<double> values(const Subset& s) const override {
    tk::NoGradGuard no_grad;
    const tk::Tensor logits = readout_logits(*weights_, encode(*weights_, embeddings_, s), s);
    return softmax_values(logits.data());
  }
  std::string kind() const override { return "model"; }

 private:
  std::shared_ptr<const ViTWeights> weights_;
  Image image_;
  tk::Tensor embeddings_;
};

}  // namespace

TabularBackend::TabularBackend(std::size_t players, std::size_t classes,
                               std::vector<double> values)
    : players_(players), classes_(classes), values_(std::move(values)) {
  if (players == 0 || players > 30) throw UsageError("tabular game: d must be in [1, 30]");
  if (classes == 0) throw UsageError("tabular game: need at least one class");
  if (values_.size() != (std::size_t{1} << players) * classes) {
    throw UsageError("tabular game: expected " +
                     std::to_string((std::size_t{1} << players) * classes) +
                     " values, got " + std::to_string(values_.size()));
  }
}

std::vector<double> TabularBackend::values(const Subset& s) const {
  const std::size_t base = static_cast<std::size_t>(s.code()) * classes_;
  return std::vector<double>(values_.begin() + base, values_.begin() + base + classes_);
}

Game Game::tabular(std::size_t players, std::size_t classes, std::vector<double> values) {
  return Game(std::make_shared<TabularBackend>(players, classes, std::move(values)));
}

Game Game::additive(std::vector<std::vector<double>> weights, std::vector<double> base) {
  return Game(std::make_shared<AdditiveBackend>(std::move(weights), std::move(base)));
}

Game Game::additive(std::vector<double> weights, double base) {
  return additive(std::vector<std::vector<double>>{std::move(weights)},
                  std::vector<double>{base});
}

Game Game::model(std::shared_ptr<const ViTWeights> weights, Image image) {
  return Game(std::make_shared<ModelBackend>(std::move(weights), std::move(image)));
}

void Game::check(const Subset& s) const {
  if (!backend_) throw UsageError("game is empty");
  if (s.players() != backend_->players()) {
    throw UsageError("subset has " + std::to_string(s.players()) + " players, game has " +
                     std::to_string(backend_->players()));
  }
}

double Game::evaluate(const Subset& s, std::size_t y) const {
  check(s);
  if (y >= classes()) {
    throw UsageError("class " + std::to_string(y) + " out of range for " +
                     std::to_string(classes()) + " classes");
  }
  return backend_->values(s)[y];
}

std::vector<double> Game::evaluate_all(const Subset& s) const {
  check(s);
  return backend_->values(s);
}

std::vector<double> Game::evaluate_batch(std::span<const Subset> subsets, std::size_t y) const {
  if (!backend_) throw UsageError("game is empty");
  if (y >= classes()) throw UsageError("class out of range");
  for (const auto& s : subsets) check(s);
  std::vector<double> out(subsets.size());
  parallel_for(subsets.size(), [&](std::size_t i) { out[i] = backend_->values(subsets[i])[y]; });
  return out;
}

std::vector<std::vector<double>> Game::evaluate_batch_all(std::span<const Subset> subsets) const {
  for (const auto& s : subsets) check(s);
  std::vector<std::vector<double>> out(subsets.size());
  parallel_for(subsets.size(), [&](std::size_t i) { out[i] = backend_->values(subsets[i]); });
  return out;
}

std::pair<double, double> Game::grand_and_null(std::size_t y) const {
  return {evaluate(Subset::full(players()), y), evaluate(Subset::empty(players()), y)};
}

Game tabulate(const Game& game) {
  const std::size_t d = game.players();
  if (d > 20) throw CapabilityError("tabulate: at most 20 players");
  if (game.kind() == "tabular") return game;
  const std::size_t k = game.classes();
  const std::size_t n = std::size_t{1} << d;
  std::vector<double> values(n * k);
  parallel_for(n, [&](std::size_t code) {
    const auto v = game.backend().values(Subset::from_code(d, code));
    std::copy(v.begin(), v.end(), values.begin() + code * k);
  });
  return Game::tabular(d, k, std::move(values));
}

nlohmann::json tabular_to_json(const Game& game) {
  const Game table = tabulate(game);
  const auto& backend = dynamic_cast<const TabularBackend&>(table.backend());
  return {{"d", table.players()}, {"classes", table.classes()}, {"values", backend.table()}};
}

Game tabular_from_json(const nlohmann::json& j) {
  try {
    return Game::tabular(j.at("d").get<std::size_t>(), j.value("classes", std::size_t{1}),
                         j.at("values").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed tabular game: ") + e.what());
  }
}

Game load_tabular_game(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
  return tabular_from_json(j);
}

void save_tabular_game(const Game& game, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw UsageError("cannot write " + path.string());
  os << tabular_to_json(game).dump() << '\n';
}

}  // namespace shapkit
