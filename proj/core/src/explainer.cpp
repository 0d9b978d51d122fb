#include "shapkit/explainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "shapkit/errors.hpp"
#include "shapkit/parallel.hpp"
#include "shapkit/sampling.hpp"
#include "shapkit/training.hpp"

namespace shapkit {

using tk::Tensor;

namespace {

Tensor normal_tensor(tk::Shape shape, double stddev, Rng& rng) {
  std::vector<double> data(tk::shape_size(shape));
  for (double& v : data) v = stddev * rng.normal();
  return Tensor::from(std::move(shape), std::move(data));
}

const std::string kHeadTag = "extra_attn+3fc";
const std::string kBackbonePrefix = "backbone.";

}  // namespace

ExplainerModel ExplainerModel::init(const ViTWeights& backbone, bool use_tanh, Rng& rng) {
  const std::size_t h = backbone.config.embed;
  const std::size_t k = backbone.config.classes;
  const double hd = static_cast<double>(h);
  ExplainerModel m;
  m.backbone = backbone.clone();
  m.head_block = BlockWeights::init(h, rng);
  m.fc1_weight = normal_tensor({h, 4 * h}, 1.0 / std::sqrt(hd), rng);
  m.fc1_bias = Tensor::zeros({4 * h});
  m.fc2_weight = normal_tensor({4 * h, 4 * h}, 1.0 / std::sqrt(4.0 * hd), rng);
  m.fc2_bias = Tensor::zeros({4 * h});
  m.fc3_weight = normal_tensor({4 * h, k}, 0.1 / std::sqrt(4.0 * hd), rng);
  m.fc3_bias = Tensor::zeros({k});
  m.use_tanh = use_tanh;
  return m;
}

std::vector<NamedTensor> ExplainerModel::named_parameters() const {
  std::vector<NamedTensor> out;
  for (auto& nt : backbone.named_parameters()) out.push_back({kBackbonePrefix + nt.name, nt.tensor});
  head_block.collect("head.block.", out);
  out.push_back({"head.fc1.weight", fc1_weight});
  out.push_back({"head.fc1.bias", fc1_bias});
  out.push_back({"head.fc2.weight", fc2_weight});
  out.push_back({"head.fc2.bias", fc2_bias});
  out.push_back({"head.fc3.weight", fc3_weight});
  out.push_back({"head.fc3.bias", fc3_bias});
  return out;
}

std::vector<Tensor> ExplainerModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& nt : named_parameters()) out.push_back(nt.tensor);
  return out;
}

ExplainerModel ExplainerModel::clone() const {
  ExplainerModel m;
  m.backbone = backbone.clone();
  m.head_block = head_block.clone();
  m.fc1_weight = fc1_weight.clone();
  m.fc1_bias = fc1_bias.clone();
  m.fc2_weight = fc2_weight.clone();
  m.fc2_bias = fc2_bias.clone();
  m.fc3_weight = fc3_weight.clone();
  m.fc3_bias = fc3_bias.clone();
  m.use_tanh = use_tanh;
  return m;
}

nlohmann::json ExplainerModel::metadata() const {
  return {{"kind", "explainer"},
          {"head", kHeadTag},
          {"tanh", use_tanh},
          {"config", backbone.config.to_json()}};
}

void ExplainerModel::save(const std::filesystem::path& path) const {
  write_checkpoint(path, metadata(), named_parameters());
}

ExplainerModel ExplainerModel::load(const std::filesystem::path& path) {
  return from_checkpoint(read_checkpoint(path));
}

ExplainerModel ExplainerModel::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.metadata.value("head", std::string{}) != kHeadTag) {
    throw UsageError("checkpoint is not an explainer (missing head \"" + kHeadTag + "\")");
  }
  Checkpoint inner;
  inner.metadata = {{"kind", "vit"}, {"config", ckpt.metadata.at("config")}};
  for (const auto& nt : ckpt.tensors) {
    if (nt.name.rfind(kBackbonePrefix, 0) == 0) {
      inner.tensors.push_back({nt.name.substr(kBackbonePrefix.size()), nt.tensor});
    }
  }
  ExplainerModel m;
  m.backbone = ViTWeights::from_checkpoint(inner);
  m.head_block = BlockWeights::from_checkpoint(ckpt, "head.block.");
  auto get = [&](const std::string& name) { return ckpt.find(name).clone(); };
  m.fc1_weight = get("head.fc1.weight");
  m.fc1_bias = get("head.fc1.bias");
  m.fc2_weight = get("head.fc2.weight");
  m.fc2_bias = get("head.fc2.bias");
  m.fc3_weight = get("head.fc3.weight");
  m.fc3_bias = get("head.fc3.bias");
  m.use_tanh = ckpt.metadata.value("tanh", true);
  if (m.fc3_weight.shape() != tk::Shape{4 * m.backbone.config.embed, m.backbone.config.classes}) {
    throw UsageError("explainer checkpoint head shapes do not match its config");
  }
  return m;
}

// ---------------------------------------------------------------------------
// Forward pass and loss

Tensor explainer_raw(const ExplainerModel& model, const Image& image) {
  const ViTConfig& c = model.backbone.config;
  const std::size_t d = c.patches();
  const Subset full = Subset::full(d);
  Tensor states = encode(model.backbone, patch_embeddings(model.backbone, image), full);
  const std::vector<std::uint8_t> all(states.rows(), 1);
  states = transformer_block(model.head_block, states, all, c.heads,
                             AttentionMasking::pre_softmax);
  if (c.has_class_token()) states = tk::slice_rows(states, 1, d);
  Tensor x = tk::gelu(tk::add_row(tk::matmul(states, model.fc1_weight), model.fc1_bias));
  x = tk::gelu(tk::add_row(tk::matmul(x, model.fc2_weight), model.fc2_bias));
  x = tk::add_row(tk::matmul(x, model.fc3_weight), model.fc3_bias);
  if (model.use_tanh) x = tk::tanh(x);
  return x;
}

Tensor normalize_efficient(const Tensor& raw, std::span<const double> target) {
  const std::size_t d = raw.rows();
  const std::size_t k = raw.cols();
  if (d == 0) throw UsageError("normalize_efficient needs d >= 1");
  if (target.size() != k) throw UsageError("normalize_efficient: one target per class required");
  std::vector<double> share(k);
  for (std::size_t y = 0; y < k; ++y) share[y] = target[y] / static_cast<double>(d);
  const Tensor column_mean = tk::reshape(tk::mean(raw, 0), {k});
  return tk::add_row(tk::sub(raw, tk::add_row(Tensor::zeros({d, k}), column_mean)),
                     Tensor::from({k}, std::move(share)));
}

std::vector<double> normalize_efficient(std::span<const double> raw, std::size_t d,
                                        std::size_t classes, std::span<const double> target) {
  if (raw.size() != d * classes) throw UsageError("normalize_efficient: size mismatch");
  tk::NoGradGuard no_grad;
  const Tensor out =
      normalize_efficient(Tensor::from({d, classes}, {raw.begin(), raw.end()}), target);
  return {out.data().begin(), out.data().end()};
}

Tensor explainer_forward(const ExplainerModel& model, const Image& image,
                         std::span<const double> target) {
  return normalize_efficient(explainer_raw(model, image), target);
}

Tensor explainer_loss(const Tensor& phi, std::span<const Subset> subsets,
                      std::span<const double> values) {
  const std::size_t d = phi.rows();
  const std::size_t k = phi.cols();
  const std::size_t m = subsets.size();
  if (m == 0) throw UsageError("explainer_loss: no subsets");
  if (values.size() != m * k) throw UsageError("explainer_loss: need m x K target values");
  std::vector<double> s(m * d);
  for (std::size_t j = 0; j < m; ++j) {
    if (subsets[j].players() != d) throw UsageError("explainer_loss: subset dimension mismatch");
    for (std::size_t i = 0; i < d; ++i) s[j * d + i] = subsets[j][i] ? 1.0 : 0.0;
  }
  const Tensor pred = tk::matmul(Tensor::from({m, d}, std::move(s)), phi);
  return tk::squared_error(pred, Tensor::from({m, k}, {values.begin(), values.end()}));
}

std::vector<double> grand_minus_null(const Game& game) {
  const std::size_t d = game.players();
  const auto grand = game.evaluate_all(Subset::full(d));
  const auto null = game.evaluate_all(Subset::empty(d));
  std::vector<double> out(grand.size());
  for (std::size_t y = 0; y < out.size(); ++y) out[y] = grand[y] - null[y];
  return out;
}

Tensor explainer_loss(const ExplainerModel& model, const Game& game, const Image& image,
                      std::size_t y, std::span<const Subset> subsets) {
  if (y >= game.classes()) throw UsageError("explainer_loss: class out of range");
  const auto target = grand_minus_null(game);
  const Tensor phi = tk::slice_cols(explainer_forward(model, image, target), y, 1);
  const double null = game.evaluate(Subset::empty(game.players()), y);
  std::vector<double> values;
  for (const auto& s : subsets) values.push_back(game.evaluate(s, y) - null);
  return explainer_loss(phi, subsets, values);
}

std::vector<Attribution> explain(const ExplainerModel& model, const Image& image,
                                 std::span<const double> grand, std::span<const double> null) {
  const std::size_t k = model.classes();
  const std::size_t d = model.players();
  if (grand.size() != k || null.size() != k) throw UsageError("explain: one value per class");
  std::vector<double> target(k);
  for (std::size_t y = 0; y < k; ++y) target[y] = grand[y] - null[y];
  Tensor phi;
  {
    tk::NoGradGuard no_grad;
    phi = explainer_forward(model, image, target);
  }
  std::vector<Attribution> out(k);
  for (std::size_t y = 0; y < k; ++y) {
    out[y].values.resize(d);
    double sum = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      out[y].values[i] = phi.at(i, y);
      sum += out[y].values[i];
    }
    out[y].class_index = y;
    out[y].method = "explainer";
    out[y].efficiency_gap = std::abs(sum - target[y]);
  }
  return out;
}

std::vector<Attribution> explain(const ExplainerModel& model, const Image& image,
                                 const Game& game) {
  if (game.players() != model.players() || game.classes() != model.classes()) {
    throw UsageError("explain: game does not match the explainer");
  }
  const std::size_t d = game.players();
  return explain(model, image, game.evaluate_all(Subset::full(d)),
                 game.evaluate_all(Subset::empty(d)));
}

// ---------------------------------------------------------------------------
// Validation tuples

ValidationTuple ValidationTuple::make(std::size_t input, std::size_t y, Subset subset,
                                      double value, double null, double grand) {
  const std::size_t k = subset.cardinality();
  if (k == 0 || k == subset.players()) {
    throw UsageError("validation tuple subsets must be neither empty nor full");
  }
  return {input, y, std::move(subset), value, null, grand};
}

ValidationSet make_validation_set(std::span<const Game> games, std::span<const Image> images,
                                  std::size_t pairs, Rng& rng) {
  if (games.size() != images.size()) throw UsageError("one game per validation image required");
  if (pairs == 0) throw UsageError("validation set needs at least one pair per input");
  ValidationSet set;
  if (games.empty()) return set;
  const std::size_t d = games.front().players();
  const auto dist = SubsetDistribution::shapley_kernel(d);
  std::vector<std::vector<Subset>> drawn(games.size());
  for (std::size_t e = 0; e < games.size(); ++e) {
    for (auto& [s, c] : dist.paired_sample(rng, pairs)) {
      drawn[e].push_back(std::move(s));
      drawn[e].push_back(std::move(c));
    }
  }
  std::vector<std::vector<std::vector<double>>> values(games.size());
  set.inputs.resize(games.size());
  parallel_for(games.size(), [&](std::size_t e) {
    const Game& g = games[e];
    set.inputs[e].image = images[e];
    set.inputs[e].grand = g.evaluate_all(Subset::full(d));
    set.inputs[e].null = g.evaluate_all(Subset::empty(d));
    for (const auto& s : drawn[e]) values[e].push_back(g.evaluate_all(s));
  });
  for (std::size_t e = 0; e < games.size(); ++e) {
    for (std::size_t j = 0; j < drawn[e].size(); ++j) {
      for (std::size_t y = 0; y < values[e][j].size(); ++y) {
        set.tuples.push_back(ValidationTuple::make(e, y, drawn[e][j], values[e][j][y],
                                                   set.inputs[e].null[y],
                                                   set.inputs[e].grand[y]));
      }
    }
  }
  return set;
}

double validation_loss(const ExplainerModel& model, const ValidationSet& set) {
  if (set.tuples.empty()) throw UsageError("validation_loss: empty tuple list");
  std::vector<std::vector<Attribution>> phi(set.inputs.size());
  parallel_for(set.inputs.size(), [&](std::size_t e) {
    const auto& in = set.inputs[e];
    phi[e] = explain(model, in.image, in.grand, in.null);
  });
  double total = 0.0;
  for (const auto& t : set.tuples) {
    const auto& values = phi.at(t.input).at(t.y).values;
    double pred = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (t.subset[i]) pred += values[i];
    }
    const double r = t.value - t.null - pred;
    total += r * r;
  }
  return total / static_cast<double>(set.tuples.size());
}

// ---------------------------------------------------------------------------
// Training

void ExplainerSchedule::validate() const {
  if (batch_size == 0) throw UsageError("explainer batch size must be positive");
  if (subsets_per_example == 0) throw UsageError("explainer needs at least one subset per example");
  if (paired && subsets_per_example % 2 != 0) {
    throw UsageError("paired sampling needs an even number of subsets per example");
  }
}

nlohmann::json ExplainerSchedule::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"subsets_per_example", subsets_per_example},
          {"paired", paired},
          {"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"seed", seed}};
}

ExplainerSchedule ExplainerSchedule::from_json(const nlohmann::json& j) {
  ExplainerSchedule s;
  s.epochs = j.value("epochs", s.epochs);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.subsets_per_example = j.value("subsets_per_example", s.subsets_per_example);
  s.paired = j.value("paired", s.paired);
  s.learning_rate = j.value("learning_rate", s.learning_rate);
  s.weight_decay = j.value("weight_decay", s.weight_decay);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

std::string ExplainerTrace::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,train_loss,validation_loss\n";
  for (const auto& e : epochs) {
    out << e.epoch << ',' << e.train_loss << ',';
    if (std::isnan(e.validation_loss)) {
      out << "nan";
    } else {
      out << e.validation_loss;
    }
    out << '\n';
  }
  return out.str();
}

ExplainerReport train_explainer(const ExplainerModel& init, std::span<const Game> games,
                                std::span<const Image> images, const ExplainerSchedule& schedule,
                                const ValidationSet* validation) {
  schedule.validate();
  if (games.size() != images.size()) throw UsageError("one game per training image required");
  const std::size_t d = init.players();
  const std::size_t k = init.classes();
  for (const auto& g : games) {
    if (g.players() != d || g.classes() != k) {
      throw UsageError("training game does not match the explainer's patches and classes");
    }
  }
  ExplainerReport report;
  report.model = init.clone();
  if (schedule.epochs == 0 || games.empty()) return report;

  const std::size_t n = games.size();
  std::vector<std::vector<double>> null(n);
  std::vector<std::vector<double>> target(n);
  parallel_for(n, [&](std::size_t e) {
    null[e] = games[e].evaluate_all(Subset::empty(d));
    const auto grand = games[e].evaluate_all(Subset::full(d));
    target[e].resize(k);
    for (std::size_t y = 0; y < k; ++y) target[e][y] = grand[y] - null[e][y];
  });

  const bool has_validation = validation != nullptr && !validation->tuples.empty();
  double best_loss = has_validation ? validation_loss(report.model, *validation)
                                    : std::numeric_limits<double>::infinity();
  ExplainerModel best = report.model.clone();

  ExplainerModel& model = report.model;
  Rng rng(schedule.seed);
  AdamW optimizer(model.parameters(),
                  {.learning_rate = schedule.learning_rate, .weight_decay = schedule.weight_decay});
  const auto dist = SubsetDistribution::shapley_kernel(d);
  const std::size_t m = schedule.subsets_per_example;
  const std::size_t batches = (n + schedule.batch_size - 1) / schedule.batch_size;
  const std::size_t total_steps = schedule.epochs * batches;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::vector<double>> grads;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * schedule.batch_size;
      const std::size_t end = std::min(n, begin + schedule.batch_size);
      const std::size_t count = end - begin;
      std::vector<std::vector<Subset>> subsets(count);
      for (std::size_t item = 0; item < count; ++item) {
        if (schedule.paired) {
          for (auto& [s, c] : dist.paired_sample(rng, m / 2)) {
            subsets[item].push_back(std::move(s));
            subsets[item].push_back(std::move(c));
          }
        } else {
          subsets[item] = dist.sample(rng, m);
        }
      }
      std::vector<std::vector<double>> values(count);
      parallel_for(count, [&](std::size_t item) {
        const std::size_t e = order[begin + item];
        values[item].reserve(m * k);
        for (const auto& s : subsets[item]) {
          const auto v = games[e].evaluate_all(s);
          for (std::size_t y = 0; y < k; ++y) values[item].push_back(v[y] - null[e][y]);
        }
      });
      const std::function<Tensor(const ExplainerModel&, std::size_t)> loss_fn =
          [&](const ExplainerModel& replica, std::size_t item) {
            const std::size_t e = order[begin + item];
            return explainer_loss(explainer_forward(replica, images[e], target[e]),
                                  subsets[item], values[item]);
          };
      const double loss = batch_gradient(model, count, loss_fn, grads, step);
      optimizer.step(grads, static_cast<double>(step) / static_cast<double>(total_steps));
      epoch_loss += loss * static_cast<double>(count);
      ++step;
    }
    ExplainerEpoch record;
    record.epoch = epoch + 1;
    record.train_loss = epoch_loss / static_cast<double>(n);
    record.validation_loss = std::numeric_limits<double>::quiet_NaN();
    if (has_validation) {
      record.validation_loss = validation_loss(model, *validation);
      if (!std::isfinite(record.validation_loss)) {
        throw TrainingError("non-finite explainer validation loss", step);
      }
      if (record.validation_loss < best_loss) {
        best_loss = record.validation_loss;
        best = model.clone();
        report.trace.best_epoch = record.epoch;
      }
    }
    report.trace.epochs.push_back(record);
  }
  if (has_validation) {
    report.model = std::move(best);
  } else {
    report.trace.best_epoch = schedule.epochs;
  }
  return report;
}

}  // namespace shapkit
