#include <cmath>
#include <iostream>
#include <limits>
#include <memory>
#include <sstream>
#include <string>

#include "shapkit/analysis.hpp"
#include "shapkit/baselines.hpp"
#include "shapkit/errors.hpp"
#include "shapkit/exact.hpp"
#include "shapkit/explainer.hpp"
#include "shapkit/kernelshap.hpp"
#include "shapkit/metrics.hpp"
#include "shapkit/parallel.hpp"
#include "shapkit/sampling.hpp"
#include "shapkit/surrogate.hpp"
#include "support.hpp"

namespace shapkit::cli {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOptions {
  std::string data;
  std::string split = "test";
  std::size_t count = 0;
  std::string surrogate;
  std::string explainer;
  std::string masked_model;
  std::string methods = "exact,loo,rise,random";
  std::string metrics = "insdel,faith,hitrate";
  std::string class_mode = "target";
  std::size_t samples = 200;
  std::string sensn_sizes;
  std::size_t rise_samples = 2000;
  double threshold = 0.1;
  std::string roar_strategies = "surrogate";
  std::string roar_k = "0,1,2,4";
  std::string roar_config;
  std::size_t roar_train_count = 0;
  std::string out;
  std::uint64_t seed = 0;
};

// Candidate attributions per class; several candidates (random rankings)
// are averaged at the metric level.
using ClassCandidates = std::vector<std::vector<std::vector<double>>>;

struct MethodContext {
  std::shared_ptr<const ViTWeights> surrogate;
  const ExplainerModel* explainer = nullptr;
  double threshold = 0.1;
  std::size_t rise_samples = 2000;
};

ClassCandidates attribute(const std::string& method, const MethodContext& ctx, const Game& game,
                          const Image& image, Rng& rng) {
  const std::size_t k = game.classes();
  const std::size_t d = game.players();
  ClassCandidates out(k);
  if (method == "exact") {
    const auto all = shapley_enumeration_all(game);
    for (std::size_t y = 0; y < k; ++y) out[y] = {all[y].values};
  } else if (method == "explainer") {
    if (ctx.explainer == nullptr) throw UsageError("method 'explainer' needs --explainer");
    const auto all = explain(*ctx.explainer, image, game);
    for (std::size_t y = 0; y < k; ++y) out[y] = {all[y].values};
  } else if (method == "kernelshap") {
    for (std::size_t y = 0; y < k; ++y) {
      KernelShapConfig config;
      config.threshold = ctx.threshold;
      config.seed = rng.next_u64();
      out[y] = {kernelshap(game, y, config).attribution.values};
    }
  } else if (method == "loo") {
    for (std::size_t y = 0; y < k; ++y) out[y] = {leave_one_out(game, y).values};
  } else if (method == "rise") {
    for (std::size_t y = 0; y < k; ++y) out[y] = {rise(game, y, ctx.rise_samples, rng).values};
  } else if (method == "vanilla") {
    for (std::size_t y = 0; y < k; ++y) out[y] = {vanilla_gradient(*ctx.surrogate, image, y).values};
  } else if (method == "attn-last") {
    const auto a = attention_last(*ctx.surrogate, image).values;
    for (std::size_t y = 0; y < k; ++y) out[y] = {a};
  } else if (method == "random") {
    const auto rankings = random_ranking(d, rng);
    for (std::size_t y = 0; y < k; ++y) {
      for (const auto& r : rankings) out[y].push_back(r.values);
    }
  } else {
    throw UsageError("unknown method '" + method + "'");
  }
  return out;
}

double mean_defined(const std::vector<double>& values) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : values) {
    if (std::isfinite(v)) {
      sum += v;
      ++n;
    }
  }
  return n == 0 ? kNaN : sum / static_cast<double>(n);
}

double value_or_nan(const std::optional<double>& v) { return v ? *v : kNaN; }

nlohmann::json summarize(const std::vector<double>& per_example) {
  std::vector<double> defined;
  for (double v : per_example) {
    if (std::isfinite(v)) defined.push_back(v);
  }
  nlohmann::json j = {{"count", defined.size()},
                      {"undefined", per_example.size() - defined.size()}};
  if (defined.empty()) {
    j["mean"] = nullptr;
    j["std_error"] = nullptr;
    return j;
  }
  double mean = 0.0;
  for (double v : defined) mean += v;
  mean /= static_cast<double>(defined.size());
  double ss = 0.0;
  for (double v : defined) ss += (v - mean) * (v - mean);
  const double n = static_cast<double>(defined.size());
  j["mean"] = mean;
  j["std_error"] = defined.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  return j;
}

void run_evaluate(const EvaluateOptions& o) {
  const Dataset data = load_dataset(o.data);
  const auto surrogate = load_model(o.surrogate);
  check_compatible(*surrogate, data);
  std::unique_ptr<ExplainerModel> explainer;
  if (!o.explainer.empty()) {
    explainer = std::make_unique<ExplainerModel>(ExplainerModel::load(o.explainer));
    check_compatible(explainer->backbone, data);
  }
  const auto methods = split_list(o.methods);
  const auto metric_names = split_list(o.metrics);
  if (methods.empty() || metric_names.empty()) throw UsageError("--methods and --metrics must be non-empty");
  bool want_insdel = false, want_sensn = false, want_faith = false, want_roar = false,
       want_hit = false;
  for (const auto& m : metric_names) {
    if (m == "insdel") want_insdel = true;
    else if (m == "sensn") want_sensn = true;
    else if (m == "faith") want_faith = true;
    else if (m == "roar") want_roar = true;
    else if (m == "hitrate") want_hit = true;
    else throw UsageError("unknown metric '" + m + "' (expected insdel, sensn, faith, roar, hitrate)");
  }
  std::vector<std::string> modes;
  if (o.class_mode == "target" || o.class_mode == "both") modes.push_back("target");
  if (o.class_mode == "nontarget" || o.class_mode == "both") modes.push_back("nontarget");
  if (modes.empty()) throw UsageError("--class-mode must be target, nontarget or both");

  const auto examples = first_n(split_of(data, o.split), o.count);
  const std::size_t n = examples.size();
  const std::size_t d = surrogate->config.patches();
  const std::size_t classes = surrogate->config.classes;
  std::vector<std::size_t> sizes = parse_sizes(o.sensn_sizes);
  if (sizes.empty()) {
    for (std::size_t s = 1; s < d; ++s) sizes.push_back(s);
  }

  MethodContext ctx{surrogate, explainer.get(), o.threshold, o.rise_samples};
  const Rng root(o.seed);

  // Metric keys in a fixed order.
  std::vector<std::string> keys;
  if (want_insdel) {
    keys.push_back("insertion_auc");
    keys.push_back("deletion_auc");
  }
  if (want_faith) keys.push_back("faithfulness");
  if (want_sensn) {
    for (std::size_t s : sizes) keys.push_back("sensitivity_n:" + std::to_string(s));
  }
  const std::size_t metric_count = keys.size();

  // results[method][example][class][metric]
  std::vector<std::vector<std::vector<std::vector<double>>>> results(
      methods.size(),
      std::vector<std::vector<std::vector<double>>>(
          n, std::vector<std::vector<double>>(classes, std::vector<double>(metric_count, kNaN))));
  std::vector<std::vector<double>> hits(methods.size(), std::vector<double>(n, kNaN));
  // Target-class attributions (first candidate) for ROAR.
  std::vector<std::vector<std::vector<double>>> target_attr(methods.size(),
                                                            std::vector<std::vector<double>>(n));

  parallel_for(n, [&](std::size_t e) {
    const auto& ex = examples[e];
    Game game = model_game(surrogate, ex.image);
    if (d <= 12) game = tabulate(game);
    for (std::size_t m = 0; m < methods.size(); ++m) {
      Rng method_rng = root.split(mix_seed(e, 1000 + m));
      const auto cands = attribute(methods[m], ctx, game, ex.image, method_rng);
      target_attr[m][e] = cands[ex.label].front();
      if (want_hit) {
        std::vector<double> h;
        for (const auto& c : cands[ex.label]) h.push_back(hit_rate(c, ex, data.config.signal_patches));
        hits[m][e] = mean_defined(h);
      }
      for (std::size_t y = 0; y < classes; ++y) {
        if (y != ex.label && modes.size() == 1 && modes[0] == "target") continue;
        std::vector<std::vector<double>> per_candidate(metric_count);
        for (const auto& attr : cands[y]) {
          std::size_t slot = 0;
          if (want_insdel) {
            per_candidate[slot++].push_back(insertion_deletion(game, y, attr, CurveDirection::insert).auc);
            per_candidate[slot++].push_back(insertion_deletion(game, y, attr, CurveDirection::remove).auc);
          }
          if (want_faith) {
            Rng r = root.split(mix_seed(e, y * 4096 + 1));
            per_candidate[slot++].push_back(value_or_nan(faithfulness(game, y, attr, o.samples, r)));
          }
          if (want_sensn) {
            for (std::size_t s : sizes) {
              Rng r = root.split(mix_seed(e, y * 4096 + 2 + s));
              per_candidate[slot++].push_back(
                  value_or_nan(sensitivity_n(game, y, attr, s, o.samples, r)));
            }
          }
        }
        for (std::size_t k = 0; k < metric_count; ++k) {
          results[m][e][y][k] = mean_defined(per_candidate[k]);
        }
      }
    }
  });

  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t m = 0; m < methods.size(); ++m) {
    for (const auto& mode : modes) {
      for (std::size_t k = 0; k < metric_count; ++k) {
        std::vector<double> per_example(n);
        for (std::size_t e = 0; e < n; ++e) {
          if (mode == "target") {
            per_example[e] = results[m][e][examples[e].label][k];
          } else {
            std::vector<double> others;
            for (std::size_t y = 0; y < classes; ++y) {
              if (y != examples[e].label) others.push_back(results[m][e][y][k]);
            }
            per_example[e] = mean_defined(others);
          }
        }
        nlohmann::json entry = summarize(per_example);
        entry["method"] = methods[m];
        entry["metric"] = keys[k];
        entry["class_mode"] = mode;
        entries.push_back(entry);
      }
    }
    if (want_hit) {
      nlohmann::json entry = summarize(hits[m]);
      entry["method"] = methods[m];
      entry["metric"] = "hit_rate";
      entry["class_mode"] = "target";
      entries.push_back(entry);
    }
  }

  nlohmann::json roar = nlohmann::json::array();
  if (want_roar) {
    const auto ks = parse_sizes(o.roar_k);
    std::unique_ptr<ViTWeights> masked_model;
    if (!o.masked_model.empty()) {
      masked_model = std::make_unique<ViTWeights>(ViTWeights::load(o.masked_model));
      check_compatible(*masked_model, data);
    }
    const nlohmann::json cfg =
        o.roar_config.empty() ? nlohmann::json::object() : read_json_file(o.roar_config);
    const auto train_examples = first_n(data.train, o.roar_train_count);
    for (const auto& strategy_name : split_list(o.roar_strategies)) {
      const RoarStrategy strategy = parse_roar_strategy(strategy_name);
      RoarOptions options;
      options.config = surrogate->config;
      options.config.readout = Readout::class_token;
      if (cfg.contains("model")) {
        ViTConfig model = ViTConfig::from_json(cfg.at("model"));
        model.height = options.config.height;
        model.width = options.config.width;
        model.channels = options.config.channels;
        model.patch = options.config.patch;
        model.classes = options.config.classes;
        options.config = model;
      }
      options.schedule = TrainSchedule::from_json(cfg.value("schedule", nlohmann::json::object()));
      options.schedule.seed = o.seed;
      if (strategy == RoarStrategy::evaluate_surrogate) {
        options.evaluator = surrogate.get();
      } else if (strategy == RoarStrategy::evaluate_masked_model) {
        if (!masked_model) throw UsageError("ROAR strategy masked_model needs --masked-model");
        options.evaluator = masked_model.get();
      }
      for (std::size_t m = 0; m < methods.size(); ++m) {
        std::vector<std::vector<double>> train_attr;
        if (strategy == RoarStrategy::retrain || strategy == RoarStrategy::retrain_without_positions) {
          train_attr.resize(train_examples.size());
          parallel_for(train_examples.size(), [&](std::size_t i) {
            const auto& ex = train_examples[i];
            Game game = model_game(surrogate, ex.image);
            if (d <= 12) game = tabulate(game);
            Rng r = root.split(mix_seed(1u << 20 | i, 1000 + m));
            train_attr[i] = attribute(methods[m], ctx, game, ex.image, r)[ex.label].front();
          });
          options.train = RoarSplit{train_examples, train_attr};
        }
        const RoarSplit test{examples, target_attr[m]};
        nlohmann::json points = nlohmann::json::array();
        for (const auto& p : roar_curve(strategy, test, ks, options)) {
          points.push_back({{"k", p.k}, {"accuracy", p.accuracy}});
        }
        roar.push_back({{"method", methods[m]}, {"strategy", strategy_name}, {"points", points}});
      }
    }
  }

  write_json_file(o.out, {{"split", o.split},
                          {"examples", n},
                          {"seed", o.seed},
                          {"metrics", entries},
                          {"roar", roar}});
}

// ---------------------------------------------------------------------------
// removal-curve

struct RemovalOptions {
  std::string data;
  std::string split = "test";
  std::size_t count = 0;
  std::vector<std::string> models;
  std::string modes = "attention_mask";
  std::string reference;
  std::string fractions = "0,0.125,0.25,0.375,0.5,0.625,0.75,0.875,1";
  std::string out;
  std::uint64_t seed = 0;
};

void run_removal_curve(const RemovalOptions& o) {
  const Dataset data = load_dataset(o.data);
  const auto examples = first_n(split_of(data, o.split), o.count);
  const auto fractions = parse_doubles(o.fractions);
  std::unique_ptr<ViTWeights> reference;
  if (!o.reference.empty()) {
    reference = std::make_unique<ViTWeights>(ViTWeights::load(o.reference));
    check_compatible(*reference, data);
  }
  const auto donors = images_of(data.train);
  std::ostringstream csv;
  csv << "model,mode,fraction,mean_kl,kl_stderr,top1\n";
  csv.precision(17);
  for (const auto& path : o.models) {
    const ViTWeights model = ViTWeights::load(path);
    check_compatible(model, data);
    const std::string label = std::filesystem::path(path).stem().string();
    for (const auto& mode_name : split_list(o.modes)) {
      RemovalCurveOptions options;
      options.seed = o.seed;
      options.reference = reference.get();
      options.donors = donors;
      const auto curve = removal_curve(model, parse_removal_mode(mode_name), examples, fractions, options);
      for (const auto& p : curve) {
        csv << label << "," << mode_name << "," << p.fraction << "," << p.mean_kl << ","
            << p.kl_std_error << "," << p.top1 << "\n";
      }
    }
  }
  write_text_file(o.out, csv.str());
}

// ---------------------------------------------------------------------------
// verify-theory

struct TheoryOptions {
  std::string data;
  std::string split = "test";
  std::size_t count = 100;
  std::string explainer;
  std::string surrogate;
  std::size_t pairs = 32;
  std::size_t max_d = 50;
  std::size_t mc_d = 6;
  std::size_t mc_samples = 500000;
  std::string out;
  std::uint64_t seed = 0;
};

void run_verify_theory(const TheoryOptions& o) {
  const Rng root(o.seed);

  nlohmann::json moment = nlohmann::json::object();
  double worst = 0.0;
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t d = 2; d <= o.max_d; ++d) {
    const auto a = second_moment_analytic(d);
    const double scaled = a.lambda_min * 2.0 * harmonic(d - 1);
    worst = std::max(worst, std::abs(scaled - 1.0));
    rows.push_back({{"d", d}, {"lambda_min", a.lambda_min}, {"scaled", scaled}});
  }
  moment["analytic"] = rows;
  moment["max_abs_deviation"] = worst;
  moment["analytic_pass"] = worst <= 1e-12;

  Rng mc_rng = root.split(1);
  const auto mc = second_moment_monte_carlo(o.mc_d, o.mc_samples, mc_rng);
  const auto exact = second_moment_analytic(o.mc_d);
  double max_z = 0.0;
  for (std::size_t i = 0; i < mc.matrix.size(); ++i) {
    const double diff = std::abs(mc.matrix[i] - exact.matrix[i]);
    const double z = mc.std_error[i] > 0.0 ? diff / mc.std_error[i] : (diff > 0.0 ? kNaN : 0.0);
    max_z = std::isnan(z) || std::isnan(max_z) ? kNaN : std::max(max_z, z);
  }
  moment["monte_carlo"] = {{"d", o.mc_d},
                          {"samples", o.mc_samples},
                          {"lambda_min", mc.lambda_min},
                          {"lambda_min_std_error", mc.lambda_min_std_error},
                          {"max_entry_z", std::isnan(max_z) ? nlohmann::json(nullptr) : nlohmann::json(max_z)},
                          {"pass", !std::isnan(max_z) && max_z <= 3.0}};

  nlohmann::json bound = nullptr;
  if (!o.explainer.empty()) {
    if (o.surrogate.empty() || o.data.empty()) {
      throw UsageError("verify-theory --explainer also needs --surrogate and --data");
    }
    const Dataset data = load_dataset(o.data);
    const auto surrogate = load_model(o.surrogate);
    const ExplainerModel model = ExplainerModel::load(o.explainer);
    check_compatible(*surrogate, data);
    check_compatible(model.backbone, data);
    const auto examples = first_n(split_of(data, o.split), o.count);
    const std::size_t n = examples.size();
    const std::size_t k = surrogate->config.classes;
    const std::size_t d = surrogate->config.patches();
    // One "example" per (input, class) pair.
    std::vector<std::vector<double>> predicted(n * k), exact_phi(n * k);
    std::vector<std::vector<ResidualTuple>> tuples_by_input(n);
    const auto dist = SubsetDistribution::shapley_kernel(d);
    parallel_for(n, [&](std::size_t e) {
      const Game game = tabulate(model_game(surrogate, examples[e].image));
      const auto ex_attr = shapley_enumeration_all(game);
      const auto pred = explain(model, examples[e].image, game);
      Rng rng = root.split(mix_seed(2, e));
      const auto pairs = dist.paired_sample(rng, o.pairs);
      for (std::size_t y = 0; y < k; ++y) {
        exact_phi[e * k + y] = ex_attr[y].values;
        predicted[e * k + y] = pred[y].values;
        const double null = game.evaluate(Subset::empty(d), y);
        for (const auto& [s, c] : pairs) {
          for (const Subset* sub : {&s, &c}) {
            ResidualTuple t;
            t.example = e * k + y;
            t.subset = *sub;
            t.target = game.evaluate(*sub, y) - null;
            tuples_by_input[e].push_back(std::move(t));
          }
        }
      }
    });
    std::vector<ResidualTuple> tuples;
    for (auto& group : tuples_by_input) {
      for (auto& t : group) tuples.push_back(std::move(t));
    }
    bound = empirical_sve(predicted, exact_phi, tuples).to_json();
    bound["inputs"] = n;
    bound["classes"] = k;
    bound["tuples"] = tuples.size();
  }

  nlohmann::json out = {{"second_moment", moment}, {"estimation_bound", bound}};
  bool pass = moment["analytic_pass"].get<bool>() && moment["monte_carlo"]["pass"].get<bool>();
  if (!bound.is_null()) pass = pass && bound["pass"].get<bool>();
  out["pass"] = pass;
  write_json_file(o.out, out);
  std::cout << (pass ? "pass" : "fail") << "\n";
}

}  // namespace

void register_evaluation_commands(CLI::App& app) {
  {
    auto o = std::make_shared<EvaluateOptions>();
    auto* cmd = app.add_subcommand("evaluate", "Explanation-quality metrics");
    cmd->add_option("--data", o->data, "Dataset file")->required();
    cmd->add_option("--split", o->split, "train, val or test");
    cmd->add_option("--count", o->count, "Number of examples (0 = all)");
    cmd->add_option("--surrogate", o->surrogate, "Surrogate defining the games")->required();
    cmd->add_option("--explainer", o->explainer, "Explainer checkpoint for method 'explainer'");
    cmd->add_option("--masked-model", o->masked_model, "Evaluator for ROAR strategy masked_model");
    cmd->add_option("--methods", o->methods,
                    "Comma list of exact, explainer, kernelshap, loo, rise, vanilla, attn-last, random");
    cmd->add_option("--metrics", o->metrics, "Comma list of insdel, sensn, faith, roar, hitrate");
    cmd->add_option("--class-mode", o->class_mode, "target, nontarget or both");
    cmd->add_option("--samples", o->samples, "Subsets per correlation metric");
    cmd->add_option("--sensn-sizes", o->sensn_sizes, "Comma list of n (default 1..d-1)");
    cmd->add_option("--rise-samples", o->rise_samples, "RISE subsets");
    cmd->add_option("--threshold", o->threshold, "KernelSHAP convergence threshold");
    cmd->add_option("--roar-strategies", o->roar_strategies,
                    "Comma list of surrogate, masked_model, retrain, retrain_no_position");
    cmd->add_option("--roar-k", o->roar_k, "Comma list of removal counts");
    cmd->add_option("--roar-config", o->roar_config, "Retraining JSON (\"model\", \"schedule\")");
    cmd->add_option("--roar-train-count", o->roar_train_count, "Training examples for retraining (0 = all)");
    cmd->add_option("--out", o->out, "Report JSON")->required();
    cmd->add_option("--seed", o->seed, "Random seed");
    cmd->callback([o] { run_evaluate(*o); });
  }
  {
    auto o = std::make_shared<RemovalOptions>();
    auto* cmd = app.add_subcommand("removal-curve", "Prediction drift as patches are removed");
    cmd->add_option("--data", o->data, "Dataset file")->required();
    cmd->add_option("--split", o->split, "train, val or test");
    cmd->add_option("--count", o->count, "Number of examples (0 = all)");
    cmd->add_option("--model", o->models, "Model checkpoint (repeatable)")->required();
    cmd->add_option("--modes", o->modes,
                    "Comma list of attention_mask, post_softmax, zero_input, zero_embedding, "
                    "random_replacement");
    cmd->add_option("--reference", o->reference, "Model whose full-image prediction is the target");
    cmd->add_option("--fractions", o->fractions, "Comma list of removal fractions");
    cmd->add_option("--out", o->out, "Output CSV")->required();
    cmd->add_option("--seed", o->seed, "Random seed");
    cmd->callback([o] { run_removal_curve(*o); });
  }
  {
    auto o = std::make_shared<TheoryOptions>();
    auto* cmd = app.add_subcommand("verify-theory", "Second-moment and estimation-error checks");
    cmd->add_option("--data", o->data, "Dataset file");
    cmd->add_option("--split", o->split, "train, val or test");
    cmd->add_option("--count", o->count, "Held-out inputs");
    cmd->add_option("--explainer", o->explainer, "Explainer checkpoint");
    cmd->add_option("--surrogate", o->surrogate, "Surrogate defining the games");
    cmd->add_option("--pairs", o->pairs, "Paired subsets per input for the loss estimate");
    cmd->add_option("--max-d", o->max_d, "Largest d for the analytic check");
    cmd->add_option("--mc-d", o->mc_d, "d for the Monte Carlo check");
    cmd->add_option("--mc-samples", o->mc_samples, "Monte Carlo draws");
    cmd->add_option("--out", o->out, "Report JSON")->required();
    cmd->add_option("--seed", o->seed, "Random seed");
    cmd->callback([o] { run_verify_theory(*o); });
  }
}

}  // namespace shapkit::cli
