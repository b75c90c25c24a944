#pragma once

#include <cstddef>
#include <filesystem>

#include "ckd/tensor.hpp"

namespace ckd {

struct ImageSize {
  std::size_t height = 224;
  std::size_t width = 224;

  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

// Decodes to an (H, W, 3) RGB tensor of raw 8-bit-scale intensities [0, 255].
// Grayscale is replicated to three channels; alpha is dropped.
Tensor decode_image(const std::filesystem::path& path);

// Bilinear resample with half-pixel centres and edge clamping.
Tensor resize_bilinear(const Tensor& image, ImageSize size);

Tensor load_and_resize(const std::filesystem::path& path, ImageSize size);

// Writes an (H, W, 3) tensor in [0, 1] as an 8-bit RGB PNG.
void save_png(const Tensor& image, const std::filesystem::path& path);

// Writes an (H, W, 3) tensor of raw [0, 255] values.
void save_png_raw(const Tensor& image, const std::filesystem::path& path);

}  // namespace ckd
