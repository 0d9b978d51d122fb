#include "shapkit/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

#include "shapkit/checkpoint.hpp"
#include "shapkit/errors.hpp"
#include "shapkit/rng.hpp"

namespace shapkit {

namespace {

constexpr char kMagic[] = "SHPD1";
constexpr std::size_t kMagicLength = 5;

std::vector<LabeledExample> generate_split(const PlantedConfig& config,
                                           const std::vector<Image>& templates,
                                           std::size_t count, Rng rng) {
  const std::size_t d = config.patches();
  std::vector<std::size_t> labels(count);
  for (std::size_t i = 0; i < count; ++i) labels[i] = i % config.classes;
  for (std::size_t i = count; i > 1; --i) {
    std::swap(labels[i - 1], labels[rng.below(i)]);
  }

  std::vector<LabeledExample> out;
  out.reserve(count);
  const std::size_t grid_cols = config.width / config.patch;
  for (std::size_t n = 0; n < count; ++n) {
    LabeledExample ex;
    ex.label = labels[n];
    ex.image = Image(config.height, config.width, config.channels);
    for (double& px : ex.image.pixels) px = config.noise * rng.normal();

    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < config.signal_patches; ++i) {
      std::swap(order[i], order[i + rng.below(d - i)]);
    }
    ex.signal.assign(order.begin(), order.begin() + config.signal_patches);
    std::sort(ex.signal.begin(), ex.signal.end());

    const Image& tpl = templates[ex.label];
    for (std::size_t idx : ex.signal) {
      const std::size_t r0 = (idx / grid_cols) * config.patch;
      const std::size_t c0 = (idx % grid_cols) * config.patch;
      for (std::size_t r = 0; r < config.patch; ++r) {
        for (std::size_t c = 0; c < config.patch; ++c) {
          for (std::size_t ch = 0; ch < config.channels; ++ch) {
            ex.image.at(r0 + r, c0 + c, ch) += config.amplitude * tpl.at(r, c, ch);
          }
        }
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

void PlantedConfig::validate() const {
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw UsageError("planted config: image dims must be divisible by the patch size");
  }
  if (channels == 0 || classes < 2) throw UsageError("planted config: need channels >= 1, classes >= 2");
  if (signal_patches < 1 || signal_patches > patches()) {
    throw UsageError("planted config: signal_patches must be in [1, d]");
  }
  if (patches() > 255) throw UsageError("planted config: at most 255 patches supported");
  if (classes > 255) throw UsageError("planted config: at most 255 classes supported");
  if (train_size % classes || val_size % classes || test_size % classes) {
    throw UsageError("planted config: split sizes must be divisible by the class count");
  }
  if (amplitude < 0.0 || noise < 0.0) throw UsageError("planted config: negative amplitude/noise");
}

nlohmann::json PlantedConfig::to_json() const {
  return {{"height", height},         {"width", width},
          {"channels", channels},     {"patch", patch},
          {"classes", classes},       {"signal_patches", signal_patches},
          {"amplitude", amplitude},   {"noise", noise},
          {"train_size", train_size}, {"val_size", val_size},
          {"test_size", test_size},   {"seed", seed}};
}

PlantedConfig PlantedConfig::from_json(const nlohmann::json& j) {
  PlantedConfig c;
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.channels = j.value("channels", c.channels);
  c.patch = j.value("patch", c.patch);
  c.classes = j.value("classes", c.classes);
  c.signal_patches = j.value("signal_patches", c.signal_patches);
  c.amplitude = j.value("amplitude", c.amplitude);
  c.noise = j.value("noise", c.noise);
  c.train_size = j.value("train_size", c.train_size);
  c.val_size = j.value("val_size", c.val_size);
  c.test_size = j.value("test_size", c.test_size);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::vector<Image> class_templates(const PlantedConfig& config) {
  Rng rng = Rng(config.seed).split(0);
  std::vector<Image> templates;
  for (std::size_t y = 0; y < config.classes; ++y) {
    Image t(config.patch, config.patch, config.channels);
    for (double& v : t.pixels) v = (rng.next_u64() & 1) ? 1.0 : -1.0;
    templates.push_back(std::move(t));
  }
  return templates;
}

Dataset generate_dataset(const PlantedConfig& config) {
  config.validate();
  Dataset data;
  data.config = config;
  data.templates = class_templates(config);
  const Rng root(config.seed);
  data.train = generate_split(config, data.templates, config.train_size, root.split(1));
  data.val = generate_split(config, data.templates, config.val_size, root.split(2));
  data.test = generate_split(config, data.templates, config.test_size, root.split(3));
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  nlohmann::json header = {
      {"config", data.config.to_json()},
      {"splits",
       {{"train", data.train.size()}, {"val", data.val.size()}, {"test", data.test.size()}}}};
  const std::string text = header.dump();
  std::string out(kMagic, kMagicLength);
  append_u64_le(out, text.size());
  out += text;
  const std::vector<const std::vector<LabeledExample>*> splits = {&data.train, &data.val,
                                                                  &data.test};
  for (const auto* split : splits) {
    for (const auto& ex : *split) {
      for (double v : ex.image.pixels) append_f64_le(out, v);
    }
  }
  for (const auto* split : splits) {
    for (const auto& ex : *split) out.push_back(static_cast<char>(ex.label));
  }
  for (const auto* split : splits) {
    for (const auto& ex : *split) {
      out.push_back(static_cast<char>(ex.signal.size()));
      for (std::size_t i : ex.signal) out.push_back(static_cast<char>(i));
    }
  }
  write_file_bytes(path, out);
}

Dataset load_dataset(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  if (bytes.size() < kMagicLength + 8 || std::memcmp(bytes.data(), kMagic, kMagicLength) != 0) {
    throw UsageError(path.string() + " is not a SHPD1 dataset");
  }
  const std::uint64_t header_length = read_u64_le(bytes, kMagicLength);
  std::size_t pos = kMagicLength + 8;
  if (pos + header_length > bytes.size()) throw UsageError("dataset header is truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, header_length));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("dataset header is not valid JSON: ") + e.what());
  }
  pos += header_length;

  Dataset data;
  data.config = PlantedConfig::from_json(header.at("config"));
  data.templates = class_templates(data.config);
  const std::size_t sizes[3] = {header.at("splits").at("train").get<std::size_t>(),
                                header.at("splits").at("val").get<std::size_t>(),
                                header.at("splits").at("test").get<std::size_t>()};
  std::vector<LabeledExample>* splits[3] = {&data.train, &data.val, &data.test};
  const PlantedConfig& c = data.config;
  const std::size_t pixels = c.height * c.width * c.channels;
  for (int s = 0; s < 3; ++s) {
    splits[s]->resize(sizes[s]);
    for (auto& ex : *splits[s]) {
      ex.image = Image(c.height, c.width, c.channels);
      for (std::size_t i = 0; i < pixels; ++i) {
        ex.image.pixels[i] = read_f64_le(bytes, pos);
        pos += 8;
      }
    }
  }
  auto next_byte = [&]() -> std::size_t {
    if (pos >= bytes.size()) throw UsageError("dataset payload is truncated");
    return static_cast<unsigned char>(bytes[pos++]);
  };
  for (auto* split : splits) {
    for (auto& ex : *split) ex.label = next_byte();
  }
  for (auto* split : splits) {
    for (auto& ex : *split) {
      const std::size_t n = next_byte();
      ex.signal.resize(n);
      for (auto& i : ex.signal) i = next_byte();
    }
  }
  return data;
}

std::vector<std::size_t> rank_patches(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

double hit_rate(std::span<const double> attribution, const LabeledExample& example,
                std::size_t top_k) {
  if (top_k == 0 || top_k > attribution.size()) {
    throw UsageError("hit_rate: top_k must be in [1, d]");
  }
  const auto order = rank_patches(attribution);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < top_k; ++i) {
    if (std::binary_search(example.signal.begin(), example.signal.end(), order[i])) ++hits;
  }
  return static_cast<double>(hits) /
         static_cast<double>(std::min(top_k, example.signal.size()));
}

std::vector<Image> images_of(std::span<const LabeledExample> examples) {
  std::vector<Image> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(ex.image);
  return out;
}

}  // namespace shapkit
