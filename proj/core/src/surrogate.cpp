#include "shapkit/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "shapkit/errors.hpp"
#include "shapkit/parallel.hpp"
#include "shapkit/rng.hpp"
#include "shapkit/sampling.hpp"
#include "shapkit/training.hpp"

namespace shapkit {

using tk::Tensor;

Tensor surrogate_loss(const ViTWeights& student, std::span<const double> teacher_probs,
                      const Image& image, const Subset& s) {
  const std::size_t k = student.config.classes;
  if (teacher_probs.size() != k) throw UsageError("surrogate_loss: teacher class count mismatch");
  const Tensor p = Tensor::from({1, k}, {teacher_probs.begin(), teacher_probs.end()});
  return tk::kl_divergence(p, tk::softmax_rows(forward_logits(student, image, s)));
}

SurrogateReport finetune_surrogate(const ViTWeights& teacher, std::span<const Image> inputs,
                                   const TrainSchedule& schedule) {
  if (schedule.batch_size == 0) throw UsageError("batch_size must be positive");
  SurrogateReport report;
  report.weights = teacher.clone();
  if (schedule.epochs == 0 || inputs.empty()) return report;

  const ViTConfig& config = teacher.config;
  std::vector<std::vector<double>> teacher_probs(inputs.size());
  parallel_for(inputs.size(), [&](std::size_t i) {
    teacher_probs[i] = forward_full(teacher, inputs[i]);
  });

  ViTWeights& student = report.weights;
  Rng rng(schedule.seed);
  AdamW optimizer(student.parameters(),
                  {.learning_rate = schedule.learning_rate, .weight_decay = schedule.weight_decay});
  const auto dist = SubsetDistribution::uniform_cardinality(config.patches());
  const std::size_t batches = (inputs.size() + schedule.batch_size - 1) / schedule.batch_size;
  const std::size_t total_steps = schedule.epochs * batches;
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::vector<double>> grads;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * schedule.batch_size;
      const std::size_t end = std::min(inputs.size(), begin + schedule.batch_size);
      std::vector<Subset> subsets;
      for (std::size_t i = begin; i < end; ++i) {
        Subset s = dist.draw(rng);
        while (!config.has_class_token() && s.cardinality() == 0) s = dist.draw(rng);
        subsets.push_back(std::move(s));
      }
      const std::function<Tensor(const ViTWeights&, std::size_t)> loss_fn =
          [&](const ViTWeights& replica, std::size_t item) {
            const std::size_t idx = order[begin + item];
            return surrogate_loss(replica, teacher_probs[idx], inputs[idx], subsets[item]);
          };
      const double loss = batch_gradient(student, end - begin, loss_fn, grads, step);
      optimizer.step(grads, static_cast<double>(step) / static_cast<double>(total_steps));
      epoch_loss += loss * static_cast<double>(end - begin);
      ++step;
    }
    report.epoch_loss.push_back(epoch_loss / static_cast<double>(inputs.size()));
  }
  report.train_loss = report.epoch_loss.back();
  return report;
}

std::string removal_mode_name(RemovalMode mode) {
  switch (mode) {
    case RemovalMode::attention_mask: return "attention_mask";
    case RemovalMode::post_softmax: return "post_softmax";
    case RemovalMode::zero_input: return "zero_input";
    case RemovalMode::zero_embedding: return "zero_embedding";
    case RemovalMode::random_replacement: return "random_replacement";
  }
  return "unknown";
}

RemovalMode parse_removal_mode(const std::string& name) {
  for (RemovalMode m : {RemovalMode::attention_mask, RemovalMode::post_softmax,
                        RemovalMode::zero_input, RemovalMode::zero_embedding,
                        RemovalMode::random_replacement}) {
    if (removal_mode_name(m) == name) return m;
  }
  throw UsageError("unknown removal mode '" + name + "'");
}

std::vector<double> removal_predict(const ViTWeights& model, const Image& image, const Subset& s,
                                    RemovalMode mode, const Image* donor) {
  tk::NoGradGuard no_grad;
  const std::size_t d = model.config.patches();
  const Subset full = Subset::full(d);
  ForwardOptions options;
  Tensor logits;
  switch (mode) {
    case RemovalMode::attention_mask:
      logits = forward_logits(model, image, s);
      break;
    case RemovalMode::post_softmax:
      options.masking = AttentionMasking::post_softmax;
      logits = forward_logits(model, image, s, options);
      break;
    case RemovalMode::zero_embedding:
      options.zero_embeddings = true;
      logits = readout_logits(model, encode(model, patch_embeddings(model, image), s, options), full);
      break;
    case RemovalMode::zero_input:
    case RemovalMode::random_replacement: {
      if (mode == RemovalMode::random_replacement && donor == nullptr) {
        throw UsageError("random_replacement removal needs a donor image");
      }
      Image edited = image;
      for (std::size_t i = 0; i < d; ++i) {
        if (s[i]) continue;
        if (mode == RemovalMode::zero_input) {
          fill_patch(edited, i, model.config.patch, 0.0);
        } else {
          copy_patch(*donor, edited, i, model.config.patch);
        }
      }
      logits = forward_logits(model, edited, full);
      break;
    }
  }
  return softmax_values(logits.data());
}

double kl_value(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw UsageError("kl_value: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    total += p[i] * (std::log(std::max(p[i], 1e-12)) - std::log(std::max(q[i], 1e-12)));
  }
  return std::max(total, 0.0);
}

std::vector<RemovalPoint> removal_curve(const ViTWeights& model, RemovalMode mode,
                                        std::span<const LabeledExample> examples,
                                        std::span<const double> fractions,
                                        const RemovalCurveOptions& options) {
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw UsageError("removal fractions must lie in [0, 1]");
  }
  if (examples.empty()) throw UsageError("removal_curve: no examples");
  if (mode == RemovalMode::random_replacement && options.donors.empty()) {
    throw UsageError("random_replacement removal needs a donor pool");
  }
  const ViTWeights& reference = options.reference ? *options.reference : model;
  const std::size_t d = model.config.patches();
  const std::size_t n = examples.size();

  std::vector<std::vector<double>> ref_probs(n);
  parallel_for(n, [&](std::size_t i) { ref_probs[i] = forward_full(reference, examples[i].image); });

  const Rng root(options.seed);
  std::vector<RemovalPoint> curve;
  for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
    const double f = fractions[fi];
    const auto removed = static_cast<std::size_t>(std::llround(f * static_cast<double>(d)));
    std::vector<double> kl(n);
    std::vector<int> hit(n);
    parallel_for(n, [&](std::size_t i) {
      Rng rng = root.split(mix_seed(static_cast<std::uint64_t>(removed), i));
      std::vector<std::size_t> perm(d);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      for (std::size_t j = 0; j < removed; ++j) {
        std::swap(perm[j], perm[j + rng.below(d - j)]);
      }
      Subset s = Subset::full(d);
      for (std::size_t j = 0; j < removed; ++j) s.set(perm[j], false);
      const Image* donor = nullptr;
      if (mode == RemovalMode::random_replacement) {
        donor = &options.donors[rng.below(options.donors.size())];
      }
      std::vector<double> probs;
      if (removed == 0) {
        probs = forward_full(model, examples[i].image);
      } else {
        probs = removal_predict(model, examples[i].image, s, mode, donor);
      }
      kl[i] = kl_value(ref_probs[i], probs);
      const auto best = std::max_element(probs.begin(), probs.end()) - probs.begin();
      hit[i] = static_cast<std::size_t>(best) == examples[i].label;
    });
    RemovalPoint point;
    point.fraction = f;
    double sum = 0.0;
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sum += kl[i];
      sq += kl[i] * kl[i];
      point.top1 += hit[i];
    }
    const double nn = static_cast<double>(n);
    point.mean_kl = sum / nn;
    point.kl_std_error =
        n > 1 ? std::sqrt(std::max(0.0, (sq - nn * point.mean_kl * point.mean_kl) / (nn - 1.0)) / nn)
              : 0.0;
    point.top1 /= nn;
    curve.push_back(point);
  }
  return curve;
}

std::string removal_curve_csv(std::span<const RemovalPoint> curve) {
  std::ostringstream out;
  out.precision(17);
  out << "fraction,mean_kl,kl_stderr,top1\n";
  for (const auto& p : curve) {
    out << p.fraction << ',' << p.mean_kl << ',' << p.kl_std_error << ',' << p.top1 << '\n';
  }
  return out.str();
}

}  // namespace shapkit
