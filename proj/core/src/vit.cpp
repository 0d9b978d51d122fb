#include "shapkit/vit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "shapkit/errors.hpp"
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

std::string readout_name(Readout r) {
  return r == Readout::class_token ? "class_token" : "global_average_pool";
}

std::vector<std::uint8_t> token_mask(const ViTConfig& config, const Subset& s) {
  std::vector<std::uint8_t> mask;
  mask.reserve(config.tokens());
  if (config.has_class_token()) mask.push_back(1);
  for (auto b : s.bits()) mask.push_back(b);
  return mask;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void ViTConfig::validate() const {
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw UsageError("ViT config: image dims must be divisible by the patch size");
  }
  if (channels == 0 || embed == 0 || heads == 0 || classes == 0) {
    throw UsageError("ViT config: channels, embed, heads and classes must be positive");
  }
  if (embed % heads != 0) throw UsageError("ViT config: embed dim must be divisible by heads");
}

ViTConfig ViTConfig::mini() {
  ViTConfig c;
  c.height = 8;
  c.width = 16;
  return c;
}

nlohmann::json ViTConfig::to_json() const {
  return {{"height", height}, {"width", width},   {"channels", channels},
          {"patch", patch},   {"embed", embed},   {"heads", heads},
          {"layers", layers}, {"classes", classes}, {"readout", readout_name(readout)},
          {"positional", positional}};
}

ViTConfig ViTConfig::from_json(const nlohmann::json& j) {
  ViTConfig c;
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.channels = j.value("channels", c.channels);
  c.patch = j.value("patch", c.patch);
  c.embed = j.value("embed", c.embed);
  c.heads = j.value("heads", c.heads);
  c.layers = j.value("layers", c.layers);
  c.classes = j.value("classes", c.classes);
  const std::string readout = j.value("readout", std::string("class_token"));
  if (readout == "class_token") {
    c.readout = Readout::class_token;
  } else if (readout == "global_average_pool") {
    c.readout = Readout::global_average_pool;
  } else {
    throw UsageError("unknown readout '" + readout + "'");
  }
  c.positional = j.value("positional", c.positional);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Weights

BlockWeights BlockWeights::init(std::size_t embed, Rng& rng) {
  const double h = static_cast<double>(embed);
  BlockWeights b;
  b.norm1_gain = Tensor::full({embed}, 1.0);
  b.norm1_bias = Tensor::zeros({embed});
  b.qkv_weight = normal_tensor({embed, 3 * embed}, 1.0 / std::sqrt(h), rng);
  b.qkv_bias = Tensor::zeros({3 * embed});
  b.out_weight = normal_tensor({embed, embed}, 1.0 / std::sqrt(h), rng);
  b.out_bias = Tensor::zeros({embed});
  b.norm2_gain = Tensor::full({embed}, 1.0);
  b.norm2_bias = Tensor::zeros({embed});
  b.fc1_weight = normal_tensor({embed, 4 * embed}, 1.0 / std::sqrt(h), rng);
  b.fc1_bias = Tensor::zeros({4 * embed});
  b.fc2_weight = normal_tensor({4 * embed, embed}, 1.0 / std::sqrt(4.0 * h), rng);
  b.fc2_bias = Tensor::zeros({embed});
  return b;
}

BlockWeights BlockWeights::clone() const {
  return {norm1_gain.clone(), norm1_bias.clone(), qkv_weight.clone(), qkv_bias.clone(),
          out_weight.clone(), out_bias.clone(),   norm2_gain.clone(), norm2_bias.clone(),
          fc1_weight.clone(), fc1_bias.clone(),   fc2_weight.clone(), fc2_bias.clone()};
}

void BlockWeights::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + "norm1.gain", norm1_gain});
  out.push_back({prefix + "norm1.bias", norm1_bias});
  out.push_back({prefix + "attn.qkv.weight", qkv_weight});
  out.push_back({prefix + "attn.qkv.bias", qkv_bias});
  out.push_back({prefix + "attn.out.weight", out_weight});
  out.push_back({prefix + "attn.out.bias", out_bias});
  out.push_back({prefix + "norm2.gain", norm2_gain});
  out.push_back({prefix + "norm2.bias", norm2_bias});
  out.push_back({prefix + "mlp.fc1.weight", fc1_weight});
  out.push_back({prefix + "mlp.fc1.bias", fc1_bias});
  out.push_back({prefix + "mlp.fc2.weight", fc2_weight});
  out.push_back({prefix + "mlp.fc2.bias", fc2_bias});
}

BlockWeights BlockWeights::from_checkpoint(const Checkpoint& ckpt, const std::string& prefix) {
  auto get = [&](const std::string& name) { return ckpt.find(prefix + name).clone(); };
  return {get("norm1.gain"),      get("norm1.bias"),      get("attn.qkv.weight"),
          get("attn.qkv.bias"),   get("attn.out.weight"), get("attn.out.bias"),
          get("norm2.gain"),      get("norm2.bias"),      get("mlp.fc1.weight"),
          get("mlp.fc1.bias"),    get("mlp.fc2.weight"),  get("mlp.fc2.bias")};
}

ViTWeights ViTWeights::init(const ViTConfig& config, Rng& rng) {
  config.validate();
  const std::size_t h = config.embed;
  ViTWeights w;
  w.config = config;
  w.patch_weight =
      normal_tensor({config.patch_dim(), h}, 1.0 / std::sqrt(double(config.patch_dim())), rng);
  w.patch_bias = Tensor::zeros({h});
  w.position = normal_tensor({config.tokens(), h}, 0.02, rng);
  if (config.has_class_token()) w.class_token = normal_tensor({1, h}, 0.02, rng);
  for (std::size_t l = 0; l < config.layers; ++l) w.blocks.push_back(BlockWeights::init(h, rng));
  w.norm_gain = Tensor::full({h}, 1.0);
  w.norm_bias = Tensor::zeros({h});
  w.head_weight = normal_tensor({h, config.classes}, 0.1 / std::sqrt(double(h)), rng);
  w.head_bias = Tensor::zeros({config.classes});
  return w;
}

std::vector<NamedTensor> ViTWeights::named_parameters() const {
  std::vector<NamedTensor> out;
  out.push_back({"patch.weight", patch_weight});
  out.push_back({"patch.bias", patch_bias});
  out.push_back({"position", position});
  if (class_token.defined()) out.push_back({"class_token", class_token});
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    blocks[l].collect("blocks." + std::to_string(l) + ".", out);
  }
  out.push_back({"norm.gain", norm_gain});
  out.push_back({"norm.bias", norm_bias});
  out.push_back({"head.weight", head_weight});
  out.push_back({"head.bias", head_bias});
  return out;
}

std::vector<Tensor> ViTWeights::parameters() const {
  std::vector<Tensor> out;
  for (auto& nt : named_parameters()) out.push_back(nt.tensor);
  return out;
}

ViTWeights ViTWeights::clone() const {
  ViTWeights w;
  w.config = config;
  w.patch_weight = patch_weight.clone();
  w.patch_bias = patch_bias.clone();
  w.position = position.clone();
  if (class_token.defined()) w.class_token = class_token.clone();
  for (const auto& b : blocks) w.blocks.push_back(b.clone());
  w.norm_gain = norm_gain.clone();
  w.norm_bias = norm_bias.clone();
  w.head_weight = head_weight.clone();
  w.head_bias = head_bias.clone();
  return w;
}

nlohmann::json ViTWeights::metadata() const {
  return {{"kind", "vit"}, {"config", config.to_json()}};
}

void ViTWeights::save(const std::filesystem::path& path) const {
  write_checkpoint(path, metadata(), named_parameters());
}

ViTWeights ViTWeights::load(const std::filesystem::path& path) {
  return from_checkpoint(read_checkpoint(path));
}

ViTWeights ViTWeights::from_checkpoint(const Checkpoint& ckpt) {
  ViTWeights w;
  w.config = ViTConfig::from_json(ckpt.metadata.at("config"));
  auto get = [&](const std::string& name) { return ckpt.find(name).clone(); };
  w.patch_weight = get("patch.weight");
  w.patch_bias = get("patch.bias");
  w.position = get("position");
  if (w.config.has_class_token()) w.class_token = get("class_token");
  for (std::size_t l = 0; l < w.config.layers; ++l) {
    w.blocks.push_back(BlockWeights::from_checkpoint(ckpt, "blocks." + std::to_string(l) + "."));
  }
  w.norm_gain = get("norm.gain");
  w.norm_bias = get("norm.bias");
  w.head_weight = get("head.weight");
  w.head_bias = get("head.bias");
  if (w.patch_weight.shape() != tk::Shape{w.config.patch_dim(), w.config.embed} ||
      w.position.shape() != tk::Shape{w.config.tokens(), w.config.embed} ||
      w.head_weight.shape() != tk::Shape{w.config.embed, w.config.classes}) {
    throw UsageError("checkpoint tensor shapes do not match its config");
  }
  return w;
}

// ---------------------------------------------------------------------------
// Forward pass

Tensor patch_embeddings(const ViTWeights& w, const Image& image) {
  const ViTConfig& c = w.config;
  if (image.height != c.height || image.width != c.width || image.channels != c.channels) {
    throw UsageError("image dims do not match the model config");
  }
  return tk::add_row(tk::matmul(patchify(image, c.patch), w.patch_weight), w.patch_bias);
}

Tensor transformer_block(const BlockWeights& block, const Tensor& tokens,
                         std::span<const std::uint8_t> key_mask, std::size_t heads,
                         AttentionMasking masking, std::vector<Tensor>* attention) {
  const std::size_t t = tokens.rows();
  const std::size_t h = tokens.cols();
  const std::size_t hd = h / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  Tensor normed = tk::layer_norm_rows(tokens, block.norm1_gain, block.norm1_bias);
  Tensor qkv = tk::add_row(tk::matmul(normed, block.qkv_weight), block.qkv_bias);

  Tensor column_keep;
  if (masking == AttentionMasking::post_softmax) {
    std::vector<double> keep(t * t);
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < t; ++j) keep[i * t + j] = key_mask[j] ? 1.0 : 0.0;
    }
    column_keep = Tensor::from({t, t}, std::move(keep));
  }

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(heads);
  for (std::size_t i = 0; i < heads; ++i) {
    Tensor q = tk::slice_cols(qkv, i * hd, hd);
    Tensor k = tk::slice_cols(qkv, h + i * hd, hd);
    Tensor v = tk::slice_cols(qkv, 2 * h + i * hd, hd);
    Tensor scores = tk::scale(tk::matmul(q, tk::transpose(k)), inv_sqrt);
    Tensor weights = masking == AttentionMasking::pre_softmax
                         ? tk::masked_softmax_rows(scores, key_mask)
                         : tk::mul(tk::softmax_rows(scores), column_keep);
    if (attention) attention->push_back(weights);
    head_outputs.push_back(tk::matmul(weights, v));
  }
  Tensor merged = heads == 1 ? head_outputs.front() : tk::concat_cols(head_outputs);
  Tensor x = tk::add(tokens, tk::add_row(tk::matmul(merged, block.out_weight), block.out_bias));

  Tensor normed2 = tk::layer_norm_rows(x, block.norm2_gain, block.norm2_bias);
  Tensor hidden = tk::gelu(tk::add_row(tk::matmul(normed2, block.fc1_weight), block.fc1_bias));
  return tk::add(x, tk::add_row(tk::matmul(hidden, block.fc2_weight), block.fc2_bias));
}

Tensor encode(const ViTWeights& w, const Tensor& embeddings, const Subset& s,
              const ForwardOptions& options) {
  const ViTConfig& c = w.config;
  if (s.players() != c.patches()) {
    throw UsageError("subset has " + std::to_string(s.players()) + " players, model has " +
                     std::to_string(c.patches()) + " patches");
  }
  if (!c.has_class_token() && s.cardinality() == 0) {
    throw DomainError("global-average-pool readout over an empty patch set");
  }

  Tensor x = embeddings;
  std::vector<std::uint8_t> mask = token_mask(c, s);
  if (options.zero_embeddings) {
    std::vector<double> keep(c.patches() * c.embed);
    for (std::size_t i = 0; i < c.patches(); ++i) {
      std::fill_n(keep.begin() + i * c.embed, c.embed, s[i] ? 1.0 : 0.0);
    }
    x = tk::mul(x, Tensor::from({c.patches(), c.embed}, std::move(keep)));
    std::fill(mask.begin(), mask.end(), 1);
  }
  if (c.has_class_token()) x = tk::concat_rows({w.class_token, x});
  if (c.positional) x = tk::add(x, w.position);

  for (std::size_t l = 0; l < w.blocks.size(); ++l) {
    const bool last = l + 1 == w.blocks.size();
    x = transformer_block(w.blocks[l], x, mask, c.heads, options.masking,
                          last ? options.final_attention : nullptr);
  }
  return tk::layer_norm_rows(x, w.norm_gain, w.norm_bias);
}

Tensor readout_logits(const ViTWeights& w, const Tensor& states, const Subset& s) {
  Tensor pooled;
  if (w.config.has_class_token()) {
    pooled = tk::slice_rows(states, 0, 1);
  } else {
    const auto retained = s.indices();
    if (retained.empty()) throw DomainError("global-average-pool readout over an empty patch set");
    pooled = tk::mean(tk::gather_rows(states, retained), 0);
  }
  return tk::add_row(tk::matmul(pooled, w.head_weight), w.head_bias);
}

Tensor forward_logits(const ViTWeights& w, const Image& image, const Subset& s,
                      const ForwardOptions& options) {
  return readout_logits(w, encode(w, patch_embeddings(w, image), s, options), s);
}

std::vector<double> softmax_values(std::span<const double> logits) {
  double peak = -std::numeric_limits<double>::infinity();
  for (double v : logits) peak = std::max(peak, v);
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

std::vector<double> forward_masked(const ViTWeights& w, const Image& image, const Subset& s) {
  tk::NoGradGuard no_grad;
  const Tensor logits = forward_logits(w, image, s);
  return softmax_values(logits.data());
}

std::vector<double> forward_full(const ViTWeights& w, const Image& image) {
  return forward_masked(w, image, Subset::full(w.config.patches()));
}

// ---------------------------------------------------------------------------
// Training

nlohmann::json TrainSchedule::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"seed", seed}};
}

TrainSchedule TrainSchedule::from_json(const nlohmann::json& j) {
  TrainSchedule s;
  s.epochs = j.value("epochs", s.epochs);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.learning_rate = j.value("learning_rate", s.learning_rate);
  s.weight_decay = j.value("weight_decay", s.weight_decay);
  s.seed = j.value("seed", s.seed);
  if (s.batch_size == 0) throw UsageError("batch_size must be positive");
  return s;
}

EvaluationSummary evaluate_classifier(const ViTWeights& w,
                                      std::span<const LabeledExample> examples,
                                      std::span<const Subset> subsets) {
  if (examples.empty()) return {};
  if (!subsets.empty() && subsets.size() != examples.size()) {
    throw UsageError("evaluate_classifier: one subset per example required");
  }
  std::vector<double> losses(examples.size());
  std::vector<int> correct(examples.size());
  const Subset full = Subset::full(w.config.patches());
  parallel_for(examples.size(), [&](std::size_t i) {
    const auto probs =
        forward_masked(w, examples[i].image, subsets.empty() ? full : subsets[i]);
    losses[i] = -std::log(std::max(probs[examples[i].label], 1e-300));
    const auto best = std::max_element(probs.begin(), probs.end()) - probs.begin();
    correct[i] = static_cast<std::size_t>(best) == examples[i].label;
  });
  EvaluationSummary out;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    out.loss += losses[i];
    out.accuracy += correct[i];
  }
  out.loss /= static_cast<double>(examples.size());
  out.accuracy /= static_cast<double>(examples.size());
  return out;
}

ClassifierReport train_classifier(std::span<const LabeledExample> train,
                                  std::span<const LabeledExample> validation,
                                  const ViTConfig& config, const TrainSchedule& schedule,
                                  TrainMasking masking, const ViTWeights* init,
                                  std::span<const Subset> fixed_subsets,
                                  std::span<const Subset> validation_subsets) {
  config.validate();
  if (schedule.batch_size == 0) throw UsageError("batch_size must be positive");
  if (!fixed_subsets.empty()) {
    if (fixed_subsets.size() != train.size()) {
      throw UsageError("train_classifier: one fixed subset per training example required");
    }
    if (masking != TrainMasking::none) {
      throw UsageError("train_classifier: fixed subsets exclude random masking");
    }
  }
  Rng rng(schedule.seed);
  ClassifierReport report;
  if (init != nullptr) {
    if (!(init->config == config)) throw UsageError("initial weights have a different config");
    report.weights = init->clone();
  } else {
    Rng init_rng = rng.split(1);
    report.weights = ViTWeights::init(config, init_rng);
  }
  ViTWeights& weights = report.weights;
  if (schedule.epochs == 0 || train.empty()) {
    const auto val = evaluate_classifier(weights, validation, validation_subsets);
    report.validation_loss = val.loss;
    report.validation_accuracy = val.accuracy;
    return report;
  }

  AdamW optimizer(weights.parameters(),
                  {.learning_rate = schedule.learning_rate, .weight_decay = schedule.weight_decay});
  const auto dist = SubsetDistribution::uniform_cardinality(config.patches());
  const std::size_t batches = (train.size() + schedule.batch_size - 1) / schedule.batch_size;
  const std::size_t total_steps = schedule.epochs * batches;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::vector<double>> grads;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * schedule.batch_size;
      const std::size_t end = std::min(train.size(), begin + schedule.batch_size);
      std::vector<Subset> subsets;
      for (std::size_t i = begin; i < end; ++i) {
        if (masking == TrainMasking::random_subsets) {
          Subset s = dist.draw(rng);
          while (!config.has_class_token() && s.cardinality() == 0) s = dist.draw(rng);
          subsets.push_back(std::move(s));
        } else if (!fixed_subsets.empty()) {
          subsets.push_back(fixed_subsets[order[i]]);
        } else {
          subsets.push_back(Subset::full(config.patches()));
        }
      }
      const std::function<Tensor(const ViTWeights&, std::size_t)> loss_fn =
          [&](const ViTWeights& replica, std::size_t item) {
            const LabeledExample& ex = train[order[begin + item]];
            const std::size_t target[1] = {ex.label};
            return tk::cross_entropy_logits(forward_logits(replica, ex.image, subsets[item]),
                                            target);
          };
      const double loss = batch_gradient(weights, end - begin, loss_fn, grads, step);
      optimizer.step(grads, static_cast<double>(step) / static_cast<double>(total_steps));
      epoch_loss += loss * static_cast<double>(end - begin);
      ++step;
    }
    report.epoch_train_loss.push_back(epoch_loss / static_cast<double>(train.size()));
  }
  report.train_loss = report.epoch_train_loss.back();
  const auto val = evaluate_classifier(weights, validation, validation_subsets);
  report.validation_loss = val.loss;
  report.validation_accuracy = val.accuracy;
  return report;
}

}  // namespace shapkit
