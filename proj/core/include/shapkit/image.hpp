#pragma once

#include <cstddef>
#include <vector>

#include "shapkit/tensor.hpp"

namespace shapkit {

// Channel-last image: pixel (r, c, ch) lives at ((r * width) + c) * channels + ch.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t ch, double fill = 0.0)
      : height(h), width(w), channels(ch), pixels(h * w * ch, fill) {}

  double& at(std::size_t r, std::size_t c, std::size_t ch = 0) {
    return pixels[(r * width + c) * channels + ch];
  }
  double at(std::size_t r, std::size_t c, std::size_t ch = 0) const {
    return pixels[(r * width + c) * channels + ch];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// Patches in row-major grid order; each patch flattened (row, col, channel).
// Returns a [d x patch*patch*channels] tensor.
tk::Tensor patchify(const Image& image, std::size_t patch);
Image unpatchify(const tk::Tensor& patches, std::size_t height, std::size_t width,
                 std::size_t channels, std::size_t patch);

// Grid coordinates of patch i.
std::size_t patch_grid_cols(std::size_t width, std::size_t patch);

// Copies the pixels of patch i from `source` into `target`.
void copy_patch(const Image& source, Image& target, std::size_t patch_index,
                std::size_t patch);
void fill_patch(Image& target, std::size_t patch_index, std::size_t patch,
                double value);

}  // namespace shapkit
