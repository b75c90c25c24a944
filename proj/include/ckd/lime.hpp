#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "ckd/image.hpp"
#include "ckd/serialization.hpp"
#include "ckd/tensor.hpp"

namespace ckd {

struct SuperpixelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<int> labels;  // row-major, ids 0..n_segments-1
  std::size_t n_segments = 0;

  int at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  std::vector<std::size_t> areas() const;
};

// rows = round(sqrt(target * H / W)), cols = round(target / rows); cell
// boundaries at floor(r * H / rows) and floor(c * W / cols).
SuperpixelMap segment_grid(ImageSize size, std::size_t n_segments_target);

// SLIC superpixels split into 4-connected components with tiny fragments
// merged; falls back to the grid when the count leaves [target/2, 2*target].
SuperpixelMap segment_slic(const Tensor& image, std::size_t n_segments_target);

enum class Segmenter { Grid, Slic };

std::string_view to_string(Segmenter segmenter);
Segmenter parse_segmenter(std::string_view text);

SuperpixelMap segment(const Tensor& image, std::size_t n_segments_target, Segmenter segmenter);

// (n_samples, n_segments) of {0, 1}; row 0 all ones, then fair coins.
Tensor draw_masks(std::size_t n_samples, std::size_t n_segments, std::uint64_t seed);

// Segments whose mask entry is 0 are replaced by fill.
Tensor apply_mask(const Tensor& image, const SuperpixelMap& spmap, std::span<const double> mask, double fill);

double mean_intensity(const Tensor& image);

struct Perturbation {
  Tensor masks;   // (n_samples, n_segments)
  Tensor images;  // (n_samples, H, W, 3)
};

Perturbation perturb(const Tensor& image, const SuperpixelMap& spmap, std::size_t n_samples,
                     std::uint64_t seed);

// w_i = exp(-d_i^2 / width^2), d_i the cosine distance to the all-ones mask.
std::vector<double> kernel_weights(const Tensor& masks, double kernel_width);

struct SurrogateFit {
  std::vector<double> coefficients;
  double intercept = 0.0;
  double r2 = 0.0;
  bool degenerate_target = false;  // zero weighted variance in y
};

// Weighted ridge on normalised weights with an unpenalised intercept.
SurrogateFit fit_surrogate(const Tensor& masks, std::span<const double> targets,
                           std::span<const double> weights, double lambda = 1e-3);

struct LimeConfig {
  std::size_t n_segments = 50;
  std::size_t n_samples = 1000;
  double kernel_width = 0.25;
  std::size_t top_k = 5;
  std::uint64_t seed = 0;
  double ridge_lambda = 1e-3;
  Segmenter segmenter = Segmenter::Slic;
  double low_fidelity_r2 = 0.1;
  std::size_t batch_size = 32;

  void validate() const;
};

Json to_json(const LimeConfig& cfg);
LimeConfig lime_config_from_json(const Json& j);

struct ExplanationResult {
  std::size_t target_class = 0;
  std::vector<double> segment_weights;
  double intercept = 0.0;
  std::vector<std::pair<std::size_t, double>> top_k;  // descending weight
  double local_fidelity_r2 = 0.0;
  bool low_fidelity = false;
  std::size_t n_segments = 0;
};

// Maps an (N, H, W, 3) batch in [0, 1] to (N, K) probabilities.
using PredictFn = std::function<Tensor(const Tensor&)>;

ExplanationResult explain_with_map(const PredictFn& predict, const Tensor& image, const SuperpixelMap& spmap,
                                   std::size_t target_class, const LimeConfig& cfg);

ExplanationResult explain(const PredictFn& predict, const Tensor& image, std::size_t target_class,
                          const LimeConfig& cfg, SuperpixelMap* spmap_out = nullptr);

// Tints the top_k positive-weight segments (alpha blend) and draws their
// boundary pixels; every other pixel is copied unchanged.
Tensor render_overlay(const Tensor& image, const SuperpixelMap& spmap, const ExplanationResult& explanation,
                      std::size_t top_k, std::array<double, 3> tint = {1.0, 1.0, 0.0}, double alpha = 0.4,
                      std::array<double, 3> contour = {1.0, 0.85, 0.0});

Json to_json(const ExplanationResult& result);

}  // namespace ckd
