#pragma once

#include <cstdint>

#include "ckd/image.hpp"
#include "ckd/tensor.hpp"

namespace ckd {

struct AugmentationConfig {
  ImageSize target_size{224, 224};
  double rotation_range_deg = 20.0;
  double zoom_range = 0.15;
  double width_shift = 0.1;
  double height_shift = 0.1;
  bool horizontal_flip = true;
  bool vertical_flip = true;
  double rescale = 1.0 / 255.0;

  // Throws InvalidConfig when a field leaves its documented range.
  void validate() const;

  // All magnitudes zero and flips off.
  static AugmentationConfig identity(ImageSize size);

  friend bool operator==(const AugmentationConfig&, const AugmentationConfig&) = default;
};

/// One concrete draw of transform parameters.
struct AugmentParams {
  double rotation_deg = 0.0;  // counter-clockwise as displayed
  double zoom = 1.0;          // magnification about the centre
  double shift_x = 0.0;       // pixels, positive moves content right
  double shift_y = 0.0;       // pixels, positive moves content down
  bool flip_horizontal = false;
  bool flip_vertical = false;

  bool is_identity() const {
    return rotation_deg == 0.0 && zoom == 1.0 && shift_x == 0.0 && shift_y == 0.0 &&
           !flip_horizontal && !flip_vertical;
  }
};

AugmentParams draw_augment_params(const AugmentationConfig& cfg, ImageSize size,
                                  std::uint64_t seed);

// Flips first, then the affine part via inverse mapping with bilinear
// sampling; samples outside the source read as 0.
Tensor apply_augmentation(const Tensor& image, const AugmentParams& params);

Tensor augment(const Tensor& image, const AugmentationConfig& cfg, std::uint64_t seed);

}  // namespace ckd
