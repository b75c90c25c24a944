#include "ckd/augmentation.hpp"

#include <cmath>

#include "ckd/error.hpp"
#include "ckd/rng.hpp"

namespace ckd {
namespace {

constexpr double kPi = 3.14159265358979323846;

void check(bool ok, const std::string& message) {
  if (!ok) throw Error(ErrorKind::InvalidConfig, message);
}

// Coordinates within this distance of an integer snap to it, so exact
// quarter-turns and integer shifts reproduce source pixels bit-for-bit.
double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

}  // namespace

void AugmentationConfig::validate() const {
  check(target_size.height >= 32 && target_size.width >= 32, "target_size components must be >= 32");
  check(rotation_range_deg >= 0.0 && rotation_range_deg <= 180.0, "rotation_range_deg must lie in [0, 180]");
  check(zoom_range >= 0.0 && zoom_range <= 0.5, "zoom_range must lie in [0, 0.5]");
  check(width_shift >= 0.0 && width_shift <= 0.5, "width_shift must lie in [0, 0.5]");
  check(height_shift >= 0.0 && height_shift <= 0.5, "height_shift must lie in [0, 0.5]");
  check(rescale > 0.0 && std::isfinite(rescale), "rescale must be positive");
}

AugmentationConfig AugmentationConfig::identity(ImageSize size) {
  AugmentationConfig cfg;
  cfg.target_size = size;
  cfg.rotation_range_deg = 0.0;
  cfg.zoom_range = 0.0;
  cfg.width_shift = 0.0;
  cfg.height_shift = 0.0;
  cfg.horizontal_flip = false;
  cfg.vertical_flip = false;
  return cfg;
}

AugmentParams draw_augment_params(const AugmentationConfig& cfg, ImageSize size,
                                  std::uint64_t seed) {
  // Fixed draw order so toggling one transform never shifts another's draw.
  Rng rng(seed);
  const double u_rot = rng.uniform(-1.0, 1.0);
  const double u_zoom = rng.uniform(-1.0, 1.0);
  const double u_sx = rng.uniform(-1.0, 1.0);
  const double u_sy = rng.uniform(-1.0, 1.0);
  const bool u_fh = rng.bernoulli(0.5);
  const bool u_fv = rng.bernoulli(0.5);

  AugmentParams p;
  if (cfg.rotation_range_deg > 0.0) p.rotation_deg = u_rot * cfg.rotation_range_deg;
  if (cfg.zoom_range > 0.0) p.zoom = 1.0 + u_zoom * cfg.zoom_range;
  if (cfg.width_shift > 0.0) p.shift_x = u_sx * cfg.width_shift * static_cast<double>(size.width);
  if (cfg.height_shift > 0.0) {
    p.shift_y = u_sy * cfg.height_shift * static_cast<double>(size.height);
  }
  p.flip_horizontal = cfg.horizontal_flip && u_fh;
  p.flip_vertical = cfg.vertical_flip && u_fv;
  return p;
}

Tensor apply_augmentation(const Tensor& image, const AugmentParams& params) {
  if (image.rank() != 3) {
    throw Error(ErrorKind::ShapeMismatch, "augment expects (H,W,C), got " + shape_string(image.shape()));
  }
  if (params.is_identity()) return image;
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);

  Tensor flipped(image.shape());
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t sy = params.flip_vertical ? h - 1 - y : y;
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t sx = params.flip_horizontal ? w - 1 - x : x;
      for (std::size_t ch = 0; ch < c; ++ch) flipped.at(y, x, ch) = image.at(sy, sx, ch);
    }
  }
  if (params.rotation_deg == 0.0 && params.zoom == 1.0 && params.shift_x == 0.0 &&
      params.shift_y == 0.0) {
    return flipped;
  }

  const double theta = params.rotation_deg * kPi / 180.0;
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  Tensor out(image.shape(), 0.0);
  auto pixel = [&](long y, long x, std::size_t ch) {
    if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) return 0.0;
    return flipped.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), ch);
  };
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      // Forward map: dst = c + t + zoom * R(theta) (src - c), with R(theta)
      // = [[cos, sin], [-sin, cos]] in (x right, y down) coordinates.
      const double dx = (static_cast<double>(x) - cx - params.shift_x) / params.zoom;
      const double dy = (static_cast<double>(y) - cy - params.shift_y) / params.zoom;
      const double src_x = snap(cx + cos_t * dx - sin_t * dy);
      const double src_y = snap(cy + sin_t * dx + cos_t * dy);
      const double fx = std::floor(src_x), fy = std::floor(src_y);
      const double ax = src_x - fx, ay = src_y - fy;
      const auto x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double v = pixel(y0, x0, ch) * (1.0 - ax) * (1.0 - ay);
        if (ax > 0.0) v += pixel(y0, x0 + 1, ch) * ax * (1.0 - ay);
        if (ay > 0.0) v += pixel(y0 + 1, x0, ch) * (1.0 - ax) * ay;
        if (ax > 0.0 && ay > 0.0) v += pixel(y0 + 1, x0 + 1, ch) * ax * ay;
        out.at(y, x, ch) = v;
      }
    }
  }
  return out;
}

Tensor augment(const Tensor& image, const AugmentationConfig& cfg, std::uint64_t seed) {
  if (image.rank() != 3 || image.dim(0) != cfg.target_size.height ||
      image.dim(1) != cfg.target_size.width) {
    throw Error(ErrorKind::ShapeMismatch, "augment input " + shape_string(image.shape()) +
                                              " does not match target size");
  }
  return apply_augmentation(image, draw_augment_params(cfg, cfg.target_size, seed));
}

}  // namespace ckd
