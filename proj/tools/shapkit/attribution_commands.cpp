#include <iostream>
#include <memory>
#include <sstream>
#include <string>

#include "shapkit/baselines.hpp"
#include "shapkit/errors.hpp"
#include "shapkit/exact.hpp"
#include "shapkit/explainer.hpp"
#include "shapkit/kernelshap.hpp"
#include "support.hpp"

namespace shapkit::cli {

namespace {

struct Selection {
  std::string data;
  std::string split = "test";
  std::size_t index = 0;
  std::string classes = "label";
};

void add_selection(CLI::App* cmd, Selection& s, bool data_required = true) {
  auto* data = cmd->add_option("--data", s.data, "Dataset file");
  if (data_required) data->required();
  cmd->add_option("--split", s.split, "train, val or test");
  cmd->add_option("--index", s.index, "Example index within the split");
  cmd->add_option("--class", s.classes, "label, all, or a class index");
}

nlohmann::json example_header(const Selection& s, const LabeledExample& ex) {
  return {{"split", s.split}, {"index", s.index}, {"label", ex.label}, {"signal", ex.signal}};
}

struct ExplainOptions {
  Selection sel;
  std::string explainer;
  std::string surrogate;
  std::string out;
  std::string heatmap;
};

void run_explain(const ExplainOptions& o) {
  const Dataset data = load_dataset(o.sel.data);
  const ExplainerModel model = ExplainerModel::load(o.explainer);
  const auto surrogate = load_model(o.surrogate);
  check_compatible(model.backbone, data);
  check_compatible(*surrogate, data);
  const auto& ex = example_at(split_of(data, o.sel.split), o.sel.index);
  const auto classes = parse_classes(o.sel.classes, ex.label, model.classes());
  const auto all = explain(model, ex.image, model_game(surrogate, ex.image));
  std::vector<Attribution> chosen;
  for (std::size_t y : classes) chosen.push_back(all[y]);
  nlohmann::json out = example_header(o.sel, ex);
  out["attributions"] = attributions_json(chosen);
  write_json_file(o.out, out);
  if (!o.heatmap.empty()) {
    const auto& shown = classes.size() == 1 ? all[classes[0]] : all[ex.label];
    write_text_file(o.heatmap, heatmap_pgm(shown.values, data.config.height, data.config.width,
                                           data.config.patch));
  }
}

struct ExactOptions {
  Selection sel;
  std::string game;
  std::string surrogate;
  std::string out;
  std::string solver = "enumeration";
};

void run_exact(const ExactOptions& o) {
  if (o.game.empty() == o.surrogate.empty()) {
    throw UsageError("exact needs exactly one of --game or --surrogate");
  }
  if (o.solver != "enumeration" && o.solver != "wls") {
    throw UsageError("--solver must be enumeration or wls");
  }
  auto solve = [&](const Game& game, std::size_t y) {
    return o.solver == "wls" ? shapley_wls(game, y) : shapley_enumeration(game, y);
  };
  nlohmann::json out;
  std::vector<Attribution> attrs;
  if (!o.game.empty()) {
    const Game game = load_tabular_game(o.game);
    const std::string choice = o.sel.classes == "label" ? "all" : o.sel.classes;
    for (std::size_t y : parse_classes(choice, 0, game.classes())) attrs.push_back(solve(game, y));
    out = nlohmann::json::object();
  } else {
    if (o.sel.data.empty()) throw UsageError("exact --surrogate needs --data");
    const Dataset data = load_dataset(o.sel.data);
    const auto surrogate = load_model(o.surrogate);
    check_compatible(*surrogate, data);
    const auto& ex = example_at(split_of(data, o.sel.split), o.sel.index);
    const Game game = tabulate(model_game(surrogate, ex.image));
    for (std::size_t y : parse_classes(o.sel.classes, ex.label, game.classes())) {
      attrs.push_back(solve(game, y));
    }
    out = example_header(o.sel, ex);
  }
  out["attributions"] = attributions_json(attrs);
  write_json_file(o.out, out);
}

struct KernelShapOptions {
  Selection sel;
  std::string surrogate;
  std::string out;
  std::string trace;
  double threshold = 0.1;
  bool unpaired = false;
  std::size_t batch = 64;
  std::size_t max_evaluations = 100000;
  std::uint64_t seed = 0;
};

void run_kernelshap(const KernelShapOptions& o) {
  const Dataset data = load_dataset(o.sel.data);
  const auto surrogate = load_model(o.surrogate);
  check_compatible(*surrogate, data);
  const auto& ex = example_at(split_of(data, o.sel.split), o.sel.index);
  const Game game = model_game(surrogate, ex.image);
  const auto classes = parse_classes(o.sel.classes, ex.label, game.classes());
  nlohmann::json out = example_header(o.sel, ex);
  out["attributions"] = nlohmann::json::array();
  std::string trace_csv;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    KernelShapConfig config;
    config.threshold = o.threshold;
    config.paired = !o.unpaired;
    config.batch_size = o.batch;
    config.max_evaluations = o.max_evaluations;
    config.seed = mix_seed(o.seed, classes[c]);
    config.validate();
    const auto r = kernelshap(game, classes[c], config);
    nlohmann::json entry = r.attribution.to_json();
    entry["converged"] = r.converged;
    entry["evaluations"] = r.evaluations;
    entry["std_error"] = r.trace.records.empty() ? std::vector<double>{}
                                                 : r.trace.records.back().std_error;
    out["attributions"].push_back(entry);
    std::istringstream lines(r.trace.to_csv());
    std::string line;
    std::getline(lines, line);
    if (c == 0) trace_csv += "class," + line + "\n";
    while (std::getline(lines, line)) trace_csv += std::to_string(classes[c]) + "," + line + "\n";
  }
  write_json_file(o.out, out);
  if (!o.trace.empty()) write_text_file(o.trace, trace_csv);
}

struct BaselineOptions {
  Selection sel;
  std::string method;
  std::string model;
  std::string out;
  std::size_t samples = 2000;
  std::size_t repeats = 10;
  std::uint64_t seed = 0;
};

void run_baselines(const BaselineOptions& o) {
  const Dataset data = load_dataset(o.sel.data);
  const auto model = load_model(o.model);
  check_compatible(*model, data);
  const auto& ex = example_at(split_of(data, o.sel.split), o.sel.index);
  const Game game = model_game(model, ex.image);
  const auto classes = parse_classes(o.sel.classes, ex.label, game.classes());
  std::vector<Attribution> attrs;
  std::vector<std::size_t> undefined;
  Rng rng(o.seed);
  if (o.method == "random") {
    attrs = random_ranking(game.players(), rng, o.repeats);
  } else if (o.method == "attn-last") {
    attrs.push_back(attention_last(*model, ex.image));
  } else {
    for (std::size_t y : classes) {
      if (o.method == "loo") {
        attrs.push_back(leave_one_out(game, y));
      } else if (o.method == "rise") {
        Rng class_rng = rng.split(y);
        attrs.push_back(rise(game, y, o.samples, class_rng, &undefined));
      } else if (o.method == "vanilla") {
        attrs.push_back(vanilla_gradient(*model, ex.image, y));
      } else {
        throw UsageError("unknown method '" + o.method +
                         "' (expected loo, rise, vanilla, attn-last or random)");
      }
    }
  }
  nlohmann::json out = example_header(o.sel, ex);
  out["method"] = o.method;
  out["attributions"] = attributions_json(attrs);
  if (o.method == "rise") out["undefined"] = undefined;
  write_json_file(o.out, out);
}

}  // namespace

void register_attribution_commands(CLI::App& app) {
  {
    auto o = std::make_shared<ExplainOptions>();
    auto* cmd = app.add_subcommand("explain", "Attributions from a trained explainer");
    add_selection(cmd, o->sel);
    cmd->add_option("--explainer", o->explainer, "Explainer checkpoint")->required();
    cmd->add_option("--surrogate", o->surrogate, "Surrogate defining v(1) and v(0)")->required();
    cmd->add_option("--out", o->out, "Output JSON")->required();
    cmd->add_option("--heatmap", o->heatmap, "Plain PGM heatmap");
    cmd->callback([o] { run_explain(*o); });
  }
  {
    auto o = std::make_shared<ExactOptions>();
    auto* cmd = app.add_subcommand("exact", "Exact Shapley values");
    add_selection(cmd, o->sel, false);
    cmd->add_option("--game", o->game, "Tabular game JSON");
    cmd->add_option("--surrogate", o->surrogate, "Surrogate checkpoint (with --data)");
    cmd->add_option("--solver", o->solver, "enumeration or wls");
    cmd->add_option("--out", o->out, "Output JSON")->required();
    cmd->callback([o] { run_exact(*o); });
  }
  {
    auto o = std::make_shared<KernelShapOptions>();
    auto* cmd = app.add_subcommand("kernelshap", "KernelSHAP estimates with convergence tracking");
    add_selection(cmd, o->sel);
    cmd->add_option("--surrogate", o->surrogate, "Surrogate checkpoint")->required();
    cmd->add_option("--threshold", o->threshold, "Stop when max stderr / range falls below");
    cmd->add_flag("--paired", [o](std::int64_t) { o->unpaired = false; }, "Complement pairs (default)");
    cmd->add_flag("--unpaired", o->unpaired, "Independent draws");
    cmd->add_option("--batch", o->batch, "Evaluations per checkpoint");
    cmd->add_option("--max-evals", o->max_evaluations, "Evaluation budget");
    cmd->add_option("--out", o->out, "Output JSON")->required();
    cmd->add_option("--trace", o->trace, "Convergence trace CSV");
    cmd->add_option("--seed", o->seed, "Random seed");
    cmd->callback([o] { run_kernelshap(*o); });
  }
  {
    auto o = std::make_shared<BaselineOptions>();
    auto* cmd = app.add_subcommand("baselines", "Comparison attributions");
    add_selection(cmd, o->sel);
    cmd->add_option("--method", o->method, "loo, rise, vanilla, attn-last or random")->required();
    cmd->add_option("--model", o->model, "Model checkpoint")->required();
    cmd->add_option("--samples", o->samples, "RISE subsets");
    cmd->add_option("--repeats", o->repeats, "Random rankings");
    cmd->add_option("--out", o->out, "Output JSON")->required();
    cmd->add_option("--seed", o->seed, "Random seed");
    cmd->callback([o] { run_baselines(*o); });
  }
}

}  // namespace shapkit::cli
