#include "shapkit/image.hpp"

#include <string>

#include "shapkit/errors.hpp"

namespace shapkit {

namespace {

void check_divisible(std::size_t height, std::size_t width, std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw UsageError("image " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible into " + std::to_string(patch) + "-pixel patches");
  }
}

}  // namespace

std::size_t patch_grid_cols(std::size_t width, std::size_t patch) { return width / patch; }

tk::Tensor patchify(const Image& image, std::size_t patch) {
  check_divisible(image.height, image.width, patch);
  const std::size_t grid_rows = image.height / patch;
  const std::size_t grid_cols = image.width / patch;
  const std::size_t d = grid_rows * grid_cols;
  const std::size_t len = patch * patch * image.channels;
  std::vector<double> out(d * len);
  for (std::size_t gr = 0; gr < grid_rows; ++gr) {
    for (std::size_t gc = 0; gc < grid_cols; ++gc) {
      double* dst = out.data() + (gr * grid_cols + gc) * len;
      for (std::size_t r = 0; r < patch; ++r) {
        for (std::size_t c = 0; c < patch; ++c) {
          for (std::size_t ch = 0; ch < image.channels; ++ch) {
            *dst++ = image.at(gr * patch + r, gc * patch + c, ch);
          }
        }
      }
    }
  }
  return tk::Tensor::from({d, len}, std::move(out));
}

Image unpatchify(const tk::Tensor& patches, std::size_t height, std::size_t width,
                 std::size_t channels, std::size_t patch) {
  check_divisible(height, width, patch);
  const std::size_t grid_cols = width / patch;
  const std::size_t d = (height / patch) * grid_cols;
  const std::size_t len = patch * patch * channels;
  if (patches.size() != d * len) throw UsageError("unpatchify: patch tensor has wrong size");
  Image image(height, width, channels);
  const auto src = patches.data();
  for (std::size_t i = 0; i < d; ++i) {
    const std::size_t gr = i / grid_cols;
    const std::size_t gc = i % grid_cols;
    std::size_t k = i * len;
    for (std::size_t r = 0; r < patch; ++r) {
      for (std::size_t c = 0; c < patch; ++c) {
        for (std::size_t ch = 0; ch < channels; ++ch) {
          image.at(gr * patch + r, gc * patch + c, ch) = src[k++];
        }
      }
    }
  }
  return image;
}

void copy_patch(const Image& source, Image& target, std::size_t patch_index,
                std::size_t patch) {
  const std::size_t grid_cols = target.width / patch;
  const std::size_t gr = patch_index / grid_cols;
  const std::size_t gc = patch_index % grid_cols;
  for (std::size_t r = 0; r < patch; ++r) {
    for (std::size_t c = 0; c < patch; ++c) {
      for (std::size_t ch = 0; ch < target.channels; ++ch) {
        target.at(gr * patch + r, gc * patch + c, ch) =
            source.at(gr * patch + r, gc * patch + c, ch);
      }
    }
  }
}

void fill_patch(Image& target, std::size_t patch_index, std::size_t patch, double value) {
  const std::size_t grid_cols = target.width / patch;
  const std::size_t gr = patch_index / grid_cols;
  const std::size_t gc = patch_index % grid_cols;
  for (std::size_t r = 0; r < patch; ++r) {
    for (std::size_t c = 0; c < patch; ++c) {
      for (std::size_t ch = 0; ch < target.channels; ++ch) {
        target.at(gr * patch + r, gc * patch + c, ch) = value;
      }
    }
  }
}

}  // namespace shapkit
