#include <iostream>
#include <memory>
#include <string>

#include "shapkit/errors.hpp"
#include "shapkit/explainer.hpp"
#include "shapkit/surrogate.hpp"
#include "support.hpp"

namespace shapkit::cli {

namespace {

struct GenDataOptions {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

struct ClassifierOptions {
  std::string data;
  std::string config;
  std::string masking = "none";
  std::string out;
  std::string report;
  std::uint64_t seed = 0;
};

struct SurrogateOptions {
  std::string teacher;
  std::string data;
  std::string config;
  std::string out;
  std::string report;
  std::uint64_t seed = 0;
};

struct ExplainerOptions {
  std::string surrogate;
  std::string data;
  std::string init = "surrogate";
  std::string classifier;
  std::string config;
  std::string out;
  std::string trace;
  std::uint64_t seed = 0;
};

nlohmann::json optional_config(const std::string& path) {
  return path.empty() ? nlohmann::json::object() : read_json_file(path);
}

void run_gen_data(const GenDataOptions& o) {
  PlantedConfig config = PlantedConfig::from_json(optional_config(o.config));
  if (o.seed_given) config.seed = o.seed;
  const Dataset data = generate_dataset(config);
  save_dataset(data, o.out);
  std::cout << "wrote " << o.out << ": " << data.train.size() << " train, " << data.val.size()
            << " val, " << data.test.size() << " test, d = " << config.patches() << "\n";
}

void run_train_classifier(const ClassifierOptions& o) {
  const Dataset data = load_dataset(o.data);
  const nlohmann::json cfg = optional_config(o.config);
  ViTConfig model = ViTConfig::from_json(cfg.value("model", nlohmann::json::object()));
  model.height = data.config.height;
  model.width = data.config.width;
  model.channels = data.config.channels;
  model.patch = data.config.patch;
  model.classes = data.config.classes;
  TrainSchedule schedule = TrainSchedule::from_json(cfg.value("schedule", nlohmann::json::object()));
  schedule.seed = o.seed;
  TrainMasking masking;
  if (o.masking == "none") {
    masking = TrainMasking::none;
  } else if (o.masking == "random") {
    masking = TrainMasking::random_subsets;
  } else {
    throw UsageError("--masking must be 'none' or 'random', got '" + o.masking + "'");
  }
  const auto report = train_classifier(data.train, data.val, model, schedule, masking);
  report.weights.save(o.out);
  nlohmann::json summary = {{"train_loss", report.train_loss},
                            {"validation_loss", report.validation_loss},
                            {"validation_accuracy", report.validation_accuracy},
                            {"epoch_train_loss", report.epoch_train_loss},
                            {"masking", o.masking},
                            {"schedule", schedule.to_json()},
                            {"config", model.to_json()}};
  if (!o.report.empty()) write_json_file(o.report, summary);
  std::cout << "validation accuracy " << report.validation_accuracy << "\n";
}

void run_finetune_surrogate(const SurrogateOptions& o) {
  const Dataset data = load_dataset(o.data);
  const ViTWeights teacher = ViTWeights::load(o.teacher);
  check_compatible(teacher, data);
  const nlohmann::json cfg = optional_config(o.config);
  TrainSchedule schedule = TrainSchedule::from_json(cfg.value("schedule", nlohmann::json::object()));
  schedule.seed = o.seed;
  const auto report = finetune_surrogate(teacher, images_of(data.train), schedule);
  report.weights.save(o.out);
  const auto val = evaluate_classifier(report.weights, data.val);
  if (!o.report.empty()) {
    write_json_file(o.report, {{"train_loss", report.train_loss},
                               {"epoch_loss", report.epoch_loss},
                               {"validation_accuracy", val.accuracy},
                               {"schedule", schedule.to_json()}});
  }
  std::cout << "final KL " << report.train_loss << ", validation accuracy " << val.accuracy << "\n";
}

void run_train_explainer(const ExplainerOptions& o) {
  const Dataset data = load_dataset(o.data);
  const auto surrogate = load_model(o.surrogate);
  check_compatible(*surrogate, data);
  const nlohmann::json cfg = optional_config(o.config);
  ExplainerSchedule schedule =
      ExplainerSchedule::from_json(cfg.value("schedule", nlohmann::json::object()));
  schedule.seed = o.seed;
  const bool use_tanh = cfg.value("tanh", true);
  const std::size_t validation_pairs = cfg.value("validation_pairs", std::size_t{8});

  const Rng root(o.seed);
  Rng init_rng = root.split(1);
  ViTWeights backbone;
  if (o.init == "surrogate") {
    backbone = surrogate->clone();
  } else if (o.init == "classifier") {
    if (o.classifier.empty()) throw UsageError("--init classifier requires --classifier");
    backbone = ViTWeights::load(o.classifier);
    check_compatible(backbone, data);
  } else if (o.init == "random") {
    backbone = ViTWeights::init(surrogate->config, init_rng);
  } else {
    throw UsageError("--init must be surrogate, classifier or random, got '" + o.init + "'");
  }
  const ExplainerModel init = ExplainerModel::init(backbone, use_tanh, init_rng);

  auto games_for = [&](std::span<const LabeledExample> split) {
    std::vector<Game> games;
    games.reserve(split.size());
    for (const auto& ex : split) games.push_back(model_game(surrogate, ex.image));
    return games;
  };
  const auto train_games = games_for(data.train);
  const auto train_images = images_of(data.train);
  const auto val_games = games_for(data.val);
  const auto val_images = images_of(data.val);
  ValidationSet validation;
  if (validation_pairs > 0 && !val_games.empty()) {
    Rng val_rng = root.split(2);
    validation = make_validation_set(val_games, val_images, validation_pairs, val_rng);
  }
  const auto report = train_explainer(init, train_games, train_images, schedule,
                                      validation.tuples.empty() ? nullptr : &validation);
  report.model.save(o.out);
  if (!o.trace.empty()) write_text_file(o.trace, report.trace.to_csv());
  std::cout << "best epoch " << report.trace.best_epoch << "\n";
}

}  // namespace

void register_train_commands(CLI::App& app) {
  {
    auto o = std::make_shared<GenDataOptions>();
    auto* cmd = app.add_subcommand("gen-data", "Generate the planted-patch dataset");
    cmd->add_option("--config", o->config, "PlantedConfig JSON (defaults when omitted)");
    cmd->add_option("--out", o->out, "Output dataset file")->required();
    auto* seed = cmd->add_option("--seed", o->seed, "Overrides the config seed");
    cmd->callback([o, seed] {
      o->seed_given = seed->count() > 0;
      run_gen_data(*o);
    });
  }
  {
    auto o = std::make_shared<ClassifierOptions>();
    auto* cmd = app.add_subcommand("train-classifier", "Train a ViT classifier");
    cmd->add_option("--data", o->data, "Dataset file")->required();
    cmd->add_option("--config", o->config, "JSON with optional \"model\" and \"schedule\"");
    cmd->add_option("--masking", o->masking, "none or random");
    cmd->add_option("--out", o->out, "Output checkpoint")->required();
    cmd->add_option("--report", o->report, "Training summary JSON");
    cmd->add_option("--seed", o->seed, "Random seed");
    cmd->callback([o] { run_train_classifier(*o); });
  }
  {
    auto o = std::make_shared<SurrogateOptions>();
    auto* cmd = app.add_subcommand("finetune-surrogate", "Fine-tune a classifier into a surrogate");
    cmd->add_option("--teacher", o->teacher, "Trained classifier checkpoint")->required();
    cmd->add_option("--data", o->data, "Dataset file")->required();
    cmd->add_option("--config", o->config, "JSON with optional \"schedule\"");
    cmd->add_option("--out", o->out, "Output checkpoint")->required();
    cmd->add_option("--report", o->report, "Training summary JSON");
    cmd->add_option("--seed", o->seed, "Random seed");
    cmd->callback([o] { run_finetune_surrogate(*o); });
  }
  {
    auto o = std::make_shared<ExplainerOptions>();
    auto* cmd = app.add_subcommand("train-explainer", "Train the amortized Shapley explainer");
    cmd->add_option("--surrogate", o->surrogate, "Surrogate checkpoint defining the games")
        ->required();
    cmd->add_option("--data", o->data, "Dataset file")->required();
    cmd->add_option("--init", o->init, "Backbone initialization: surrogate, classifier or random");
    cmd->add_option("--classifier", o->classifier, "Classifier checkpoint for --init classifier");
    cmd->add_option("--config", o->config,
                    "JSON with optional \"schedule\", \"tanh\", \"validation_pairs\"");
    cmd->add_option("--out", o->out, "Output checkpoint")->required();
    cmd->add_option("--trace", o->trace, "Per-epoch loss CSV");
    cmd->add_option("--seed", o->seed, "Random seed");
    cmd->callback([o] { run_train_explainer(*o); });
  }
}

}  // namespace shapkit::cli
