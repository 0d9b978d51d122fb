#include "shapkit/baselines.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "shapkit/errors.hpp"
#include "shapkit/sampling.hpp"

namespace shapkit {

using tk::Tensor;

namespace {

Attribution tagged(std::vector<double> values, std::size_t y, const char* method) {
  Attribution a;
  a.values = std::move(values);
  a.class_index = y;
  a.method = method;
  a.efficiency_gap = std::numeric_limits<double>::quiet_NaN();
  return a;
}

}  // namespace

Attribution leave_one_out(const Game& game, std::size_t y) {
  const std::size_t d = game.players();
  const Subset full = Subset::full(d);
  std::vector<Subset> subsets{full};
  for (std::size_t i = 0; i < d; ++i) subsets.push_back(full.without(i));
  const auto values = game.evaluate_batch(subsets, y);
  std::vector<double> phi(d);
  for (std::size_t i = 0; i < d; ++i) phi[i] = values[0] - values[i + 1];
  return tagged(std::move(phi), y, "loo");
}

Attribution rise(const Game& game, std::size_t y, std::size_t samples, Rng& rng,
                 std::vector<std::size_t>* undefined) {
  if (samples == 0) throw UsageError("rise needs at least one sample");
  const std::size_t d = game.players();
  const auto subsets = SubsetDistribution::uniform_cardinality(d).sample(rng, samples);
  const auto values = game.evaluate_batch(subsets, y);
  std::vector<double> sum(d, 0.0);
  std::vector<std::size_t> count(d, 0);
  for (std::size_t j = 0; j < samples; ++j) {
    for (std::size_t i = 0; i < d; ++i) {
      if (subsets[j][i]) {
        sum[i] += values[j];
        ++count[i];
      }
    }
  }
  if (undefined) undefined->clear();
  for (std::size_t i = 0; i < d; ++i) {
    if (count[i] == 0) {
      sum[i] = 0.0;
      if (undefined) undefined->push_back(i);
    } else {
      sum[i] /= static_cast<double>(count[i]);
    }
  }
  return tagged(std::move(sum), y, "rise");
}

std::vector<double> probability_gradient(const ViTWeights& model, const Image& image,
                                         std::size_t y) {
  if (y >= model.config.classes) throw UsageError("class out of range");
  const Subset full = Subset::full(model.config.patches());
  Tensor embeddings;
  {
    tk::NoGradGuard no_grad;
    embeddings = patch_embeddings(model, image).detach();
  }
  embeddings.set_requires_grad(true);
  tk::Tape tape;
  const Tensor probs = tk::softmax_rows(readout_logits(model, encode(model, embeddings, full), full));
  tk::backward(tk::sum_all(tk::slice_cols(probs, y, 1)), tape);
  return embeddings.grad();
}

Attribution vanilla_gradient(const ViTWeights& model, const Image& image, std::size_t y) {
  const std::size_t d = model.config.patches();
  const std::size_t h = model.config.embed;
  const auto grad = probability_gradient(model, image, y);
  std::vector<double> phi(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < h; ++j) phi[i] += std::abs(grad[i * h + j]);
  }
  return tagged(std::move(phi), y, "vanilla");
}

Attribution attention_last(const ViTWeights& model, const Image& image, const Subset& s) {
  if (!model.config.has_class_token()) {
    throw CapabilityError("attention_last needs a class-token readout");
  }
  const std::size_t d = model.config.patches();
  std::vector<Tensor> attention;
  ForwardOptions options;
  options.final_attention = &attention;
  {
    tk::NoGradGuard no_grad;
    encode(model, patch_embeddings(model, image), s, options);
  }
  std::vector<double> phi(d, 0.0);
  for (const auto& head : attention) {
    for (std::size_t i = 0; i < d; ++i) phi[i] += head.at(0, i + 1);
  }
  return tagged(std::move(phi), 0, "attn-last");
}

Attribution attention_last(const ViTWeights& model, const Image& image) {
  return attention_last(model, image, Subset::full(model.config.patches()));
}

std::vector<Attribution> random_ranking(std::size_t d, Rng& rng, std::size_t repeats) {
  std::vector<Attribution> out;
  out.reserve(repeats);
  for (std::size_t r = 0; r < repeats; ++r) {
    std::vector<double> scores(d);
    std::iota(scores.begin(), scores.end(), 0.0);
    for (std::size_t i = d; i > 1; --i) std::swap(scores[i - 1], scores[rng.below(i)]);
    out.push_back(tagged(std::move(scores), 0, "random"));
  }
  return out;
}

}  // namespace shapkit
