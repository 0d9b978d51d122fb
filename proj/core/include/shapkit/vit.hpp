#pragma once

// Small vision transformer that evaluates any patch subset by attention
// masking. Held-out patch tokens are excluded as attention keys in every
// layer, so retained-token activations never depend on their contents.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shapkit/checkpoint.hpp"
#include "shapkit/dataset.hpp"
#include "shapkit/image.hpp"
#include "shapkit/optim.hpp"
#include "shapkit/rng.hpp"
#include "shapkit/subset.hpp"
#include "shapkit/tensor.hpp"

namespace shapkit {

enum class Readout { class_token, global_average_pool };

struct ViTConfig {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 1;
  std::size_t patch = 4;
  std::size_t embed = 32;
  std::size_t heads = 2;
  std::size_t layers = 2;
  std::size_t classes = 4;
  Readout readout = Readout::class_token;
  bool positional = true;

  std::size_t patches() const { return (height / patch) * (width / patch); }
  std::size_t patch_dim() const { return patch * patch * channels; }
  std::size_t head_dim() const { return embed / heads; }
  bool has_class_token() const { return readout == Readout::class_token; }
  std::size_t tokens() const { return patches() + (has_class_token() ? 1 : 0); }
  void validate() const;

  // 8 x 16 grayscale images with 4-pixel patches: d = 8, small enough for
  // exhaustive Shapley values.
  static ViTConfig mini();

  nlohmann::json to_json() const;
  static ViTConfig from_json(const nlohmann::json& j);
  friend bool operator==(const ViTConfig&, const ViTConfig&) = default;
};

// One pre-norm transformer block. The fused QKV projection is [h x 3h]
// with column blocks [Q | K | V]; head i uses columns i*h'..(i+1)*h'-1 of
// each block.
struct BlockWeights {
  tk::Tensor norm1_gain, norm1_bias;
  tk::Tensor qkv_weight, qkv_bias;
  tk::Tensor out_weight, out_bias;
  tk::Tensor norm2_gain, norm2_bias;
  tk::Tensor fc1_weight, fc1_bias;
  tk::Tensor fc2_weight, fc2_bias;

  static BlockWeights init(std::size_t embed, Rng& rng);
  BlockWeights clone() const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
  static BlockWeights from_checkpoint(const Checkpoint& ckpt, const std::string& prefix);
};

struct ViTWeights {
  ViTConfig config;
  tk::Tensor patch_weight, patch_bias;  // [P x h], [h]
  tk::Tensor position;                  // [tokens x h]
  tk::Tensor class_token;               // [1 x h], class-token readout only
  std::vector<BlockWeights> blocks;
  tk::Tensor norm_gain, norm_bias;
  tk::Tensor head_weight, head_bias;  // [h x K], [K]

  static ViTWeights init(const ViTConfig& config, Rng& rng);

  std::vector<NamedTensor> named_parameters() const;
  std::vector<tk::Tensor> parameters() const;
  ViTWeights clone() const;

  nlohmann::json metadata() const;
  void save(const std::filesystem::path& path) const;
  static ViTWeights load(const std::filesystem::path& path);
  static ViTWeights from_checkpoint(const Checkpoint& ckpt);
};

// How held-out patches are removed inside the network.
enum class AttentionMasking {
  pre_softmax,   // additive sentinel on key logits (the principled form)
  post_softmax,  // softmax over all keys, then zero held-out columns
};

struct ForwardOptions {
  AttentionMasking masking = AttentionMasking::pre_softmax;
  // Replace held-out patch embeddings by zeros and attend to everything.
  bool zero_embeddings = false;
  // When set, receives the final layer's per-head attention matrices.
  std::vector<tk::Tensor>* final_attention = nullptr;
};

// [d x h] projected patch embeddings (before positional embeddings).
tk::Tensor patch_embeddings(const ViTWeights& w, const Image& image);

// Runs the transformer on patch embeddings and returns the final
// layer-normalized token states [tokens x h] (class token first when present).
tk::Tensor encode(const ViTWeights& w, const tk::Tensor& embeddings, const Subset& s,
                  const ForwardOptions& options = {});

// Single transformer block on token states with a key mask over tokens.
tk::Tensor transformer_block(const BlockWeights& block, const tk::Tensor& tokens,
                             std::span<const std::uint8_t> key_mask, std::size_t heads,
                             AttentionMasking masking,
                             std::vector<tk::Tensor>* attention = nullptr);

// [1 x K] logits from encoded states.
tk::Tensor readout_logits(const ViTWeights& w, const tk::Tensor& states, const Subset& s);

tk::Tensor forward_logits(const ViTWeights& w, const Image& image, const Subset& s,
                          const ForwardOptions& options = {});

// Class probabilities with held-out patches removed by attention masking.
std::vector<double> forward_masked(const ViTWeights& w, const Image& image, const Subset& s);
std::vector<double> forward_full(const ViTWeights& w, const Image& image);

std::vector<double> softmax_values(std::span<const double> logits);

// ---------------------------------------------------------------------------
// Training

struct TrainSchedule {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 3e-3;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static TrainSchedule from_json(const nlohmann::json& j);
};

enum class TrainMasking { none, random_subsets };

struct ClassifierReport {
  ViTWeights weights;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double validation_accuracy = 0.0;
  std::vector<double> epoch_train_loss;
};

// Minimizes cross-entropy. With random_subsets, each example in each step
// is evaluated on a fresh subset drawn from the uniform-cardinality
// distribution. `init` defaults to a seeded random initialization.
// `fixed_subsets`, when given, holds one subset per training example that
// replaces the full image (masking must be none); `validation_subsets`
// likewise for the validation split.
ClassifierReport train_classifier(std::span<const LabeledExample> train,
                                  std::span<const LabeledExample> validation,
                                  const ViTConfig& config, const TrainSchedule& schedule,
                                  TrainMasking masking, const ViTWeights* init = nullptr,
                                  std::span<const Subset> fixed_subsets = {},
                                  std::span<const Subset> validation_subsets = {});

struct EvaluationSummary {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Cross-entropy and accuracy on full images (optionally masked per example).
EvaluationSummary evaluate_classifier(const ViTWeights& w,
                                      std::span<const LabeledExample> examples,
                                      std::span<const Subset> subsets = {});

}  // namespace shapkit
