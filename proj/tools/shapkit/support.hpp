#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "shapkit/attribution.hpp"
#include "shapkit/dataset.hpp"
#include "shapkit/game.hpp"
#include "shapkit/vit.hpp"

namespace shapkit::cli {

void register_train_commands(CLI::App& app);
void register_attribution_commands(CLI::App& app);
void register_evaluation_commands(CLI::App& app);

nlohmann::json read_json_file(const std::filesystem::path& path);
// Pretty-printed with a trailing newline.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// "train", "val" or "test".
std::span<const LabeledExample> split_of(const Dataset& data, const std::string& name);
const LabeledExample& example_at(std::span<const LabeledExample> split, std::size_t index);
// First `count` examples; 0 means all.
std::span<const LabeledExample> first_n(std::span<const LabeledExample> split, std::size_t count);

std::shared_ptr<const ViTWeights> load_model(const std::filesystem::path& path);
Game model_game(const std::shared_ptr<const ViTWeights>& model, const Image& image);
void check_compatible(const ViTWeights& model, const Dataset& data);

// "label" -> the example's label, "all" -> every class, otherwise an index.
std::vector<std::size_t> parse_classes(const std::string& choice, std::size_t label,
                                       std::size_t classes);

std::vector<std::string> split_list(const std::string& text);
std::vector<double> parse_doubles(const std::string& text);
std::vector<std::size_t> parse_sizes(const std::string& text);

nlohmann::json attributions_json(std::span<const Attribution> attributions);

// Plain PGM (P2), one gray level per pixel, patch scores min/max scaled to
// 0..255.
std::string heatmap_pgm(std::span<const double> scores, std::size_t height, std::size_t width,
                        std::size_t patch);

}  // namespace shapkit::cli
