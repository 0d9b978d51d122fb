#pragma once

// KL-distilled surrogate: a copy of a trained classifier fine-tuned to
// reproduce the teacher's full-image prediction from random patch subsets.
// Also the removal-quality curves that compare ways of dropping patches.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "shapkit/dataset.hpp"
#include "shapkit/image.hpp"
#include "shapkit/subset.hpp"
#include "shapkit/tensor.hpp"
#include "shapkit/vit.hpp"

namespace shapkit {

struct SurrogateReport {
  ViTWeights weights;
  double train_loss = 0.0;
  std::vector<double> epoch_loss;
};

// KL(teacher_probs || student(x_s)) for one input and subset.
tk::Tensor surrogate_loss(const ViTWeights& student, std::span<const double> teacher_probs,
                          const Image& image, const Subset& s);

// Minimizes E_x E_s KL(teacher(x) || student(x_s)) with s drawn per
// example from the uniform-cardinality distribution and redrawn every
// minibatch. The student starts as a copy of the teacher.
SurrogateReport finetune_surrogate(const ViTWeights& teacher, std::span<const Image> inputs,
                                   const TrainSchedule& schedule);

enum class RemovalMode {
  attention_mask,      // pre-softmax key masking
  post_softmax,        // softmax over all keys, then zero held-out columns
  zero_input,          // held-out pixels set to 0, full attention
  zero_embedding,      // held-out patch embeddings set to 0, full attention
  random_replacement,  // held-out patches copied from a random donor image
};

std::string removal_mode_name(RemovalMode mode);
RemovalMode parse_removal_mode(const std::string& name);

// Class probabilities of `model` on `image` with the patches outside `s`
// removed according to `mode`. `donor` is required for random_replacement.
std::vector<double> removal_predict(const ViTWeights& model, const Image& image, const Subset& s,
                                    RemovalMode mode, const Image* donor = nullptr);

struct RemovalPoint {
  double fraction = 0.0;
  double mean_kl = 0.0;
  double kl_std_error = 0.0;
  double top1 = 0.0;
};

struct RemovalCurveOptions {
  std::uint64_t seed = 0;
  // KL is measured against this model's full-image prediction; defaults to
  // the evaluated model itself.
  const ViTWeights* reference = nullptr;
  // Donor pool for random_replacement.
  std::span<const Image> donors = {};
};

// For each fraction, removes round(fraction * d) patches chosen uniformly
// at random per example (same choices for every model and mode under one
// seed) and averages KL(reference(x) || model(x with removal)) and top-1
// accuracy against the labels.
std::vector<RemovalPoint> removal_curve(const ViTWeights& model, RemovalMode mode,
                                        std::span<const LabeledExample> examples,
                                        std::span<const double> fractions,
                                        const RemovalCurveOptions& options = {});

// fraction,mean_kl,kl_stderr,top1
std::string removal_curve_csv(std::span<const RemovalPoint> curve);

// KL(p || q) with logs clamped at 1e-12.
double kl_value(std::span<const double> p, std::span<const double> q);

}  // namespace shapkit
