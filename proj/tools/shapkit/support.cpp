#include "support.hpp"

#include <algorithm>
#include <sstream>

#include "shapkit/checkpoint.hpp"
#include "shapkit/errors.hpp"

namespace shapkit::cli {

nlohmann::json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_file_bytes(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(path.string() + " is not valid JSON: " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  write_file_bytes(path, j.dump(2) + "\n");
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, text);
}

std::span<const LabeledExample> split_of(const Dataset& data, const std::string& name) {
  if (name == "train") return data.train;
  if (name == "val") return data.val;
  if (name == "test") return data.test;
  throw UsageError("unknown split '" + name + "' (expected train, val or test)");
}

const LabeledExample& example_at(std::span<const LabeledExample> split, std::size_t index) {
  if (index >= split.size()) {
    throw UsageError("--index " + std::to_string(index) + " is out of range for a split of " +
                     std::to_string(split.size()) + " examples");
  }
  return split[index];
}

std::span<const LabeledExample> first_n(std::span<const LabeledExample> split, std::size_t count) {
  if (count == 0 || count >= split.size()) return split;
  return split.first(count);
}

std::shared_ptr<const ViTWeights> load_model(const std::filesystem::path& path) {
  return std::make_shared<const ViTWeights>(ViTWeights::load(path));
}

Game model_game(const std::shared_ptr<const ViTWeights>& model, const Image& image) {
  return Game::model(model, image);
}

void check_compatible(const ViTWeights& model, const Dataset& data) {
  const auto& m = model.config;
  const auto& c = data.config;
  if (m.height != c.height || m.width != c.width || m.channels != c.channels ||
      m.patch != c.patch || m.classes != c.classes) {
    throw UsageError("model geometry does not match the dataset (image " +
                     std::to_string(c.height) + "x" + std::to_string(c.width) + ", patch " +
                     std::to_string(c.patch) + ", " + std::to_string(c.classes) + " classes)");
  }
}

std::vector<std::size_t> parse_classes(const std::string& choice, std::size_t label,
                                       std::size_t classes) {
  if (choice == "label") return {label};
  if (choice == "all") {
    std::vector<std::size_t> all(classes);
    for (std::size_t y = 0; y < classes; ++y) all[y] = y;
    return all;
  }
  std::size_t y = 0;
  try {
    std::size_t used = 0;
    y = std::stoul(choice, &used);
    if (used != choice.size()) throw std::invalid_argument(choice);
  } catch (const std::exception&) {
    throw UsageError("--class must be 'label', 'all' or a class index, got '" + choice + "'");
  }
  if (y >= classes) throw UsageError("--class " + choice + " is out of range");
  return {y};
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw UsageError("expected a number, got '" + item + "'");
    }
  }
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(text)) {
    try {
      out.push_back(std::stoul(item));
    } catch (const std::exception&) {
      throw UsageError("expected a non-negative integer, got '" + item + "'");
    }
  }
  return out;
}

nlohmann::json attributions_json(std::span<const Attribution> attributions) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& a : attributions) out.push_back(a.to_json());
  return out;
}

std::string heatmap_pgm(std::span<const double> scores, std::size_t height, std::size_t width,
                        std::size_t patch) {
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  const double range = *hi - *lo;
  const std::size_t cols = width / patch;
  std::ostringstream out;
  out << "P2\n" << width << " " << height << "\n255\n";
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const double v = scores[(r / patch) * cols + c / patch];
      const long level = range > 0.0 ? std::lround(255.0 * (v - *lo) / range) : 0;
      out << level << (c + 1 == width ? "\n" : " ");
    }
  }
  return out.str();
}

}  // namespace shapkit::cli
