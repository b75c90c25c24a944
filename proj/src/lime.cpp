#include "ckd/lime.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include <Eigen/Dense>
#include <opencv2/imgproc.hpp>
#include <opencv2/ximgproc/slic.hpp>

#include "ckd/error.hpp"
#include "ckd/rng.hpp"

namespace ckd {

std::vector<std::size_t> SuperpixelMap::areas() const {
  std::vector<std::size_t> out(n_segments, 0);
  for (int l : labels) ++out[static_cast<std::size_t>(l)];
  return out;
}

namespace {

std::vector<std::size_t> boundaries(std::size_t extent, std::size_t parts) {
  std::vector<std::size_t> b(parts + 1);
  for (std::size_t i = 0; i <= parts; ++i) b[i] = i * extent / parts;
  return b;
}

std::size_t cell_of(const std::vector<std::size_t>& bounds, std::size_t v) {
  auto it = std::upper_bound(bounds.begin(), bounds.end(), v);
  return static_cast<std::size_t>(it - bounds.begin()) - 1;
}

// Splits labels into 4-connected components, numbered in scan order.
std::vector<int> connected_components(const std::vector<int>& labels, std::size_t h, std::size_t w,
                                      std::size_t& count) {
  std::vector<int> out(labels.size(), -1);
  count = 0;
  std::deque<std::size_t> queue;
  for (std::size_t start = 0; start < labels.size(); ++start) {
    if (out[start] >= 0) continue;
    const int id = static_cast<int>(count++);
    out[start] = id;
    queue.push_back(start);
    while (!queue.empty()) {
      const std::size_t p = queue.front();
      queue.pop_front();
      const std::size_t y = p / w, x = p % w;
      const std::size_t neighbours[4] = {y > 0 ? p - w : p, y + 1 < h ? p + w : p, x > 0 ? p - 1 : p,
                                         x + 1 < w ? p + 1 : p};
      for (std::size_t q : neighbours) {
        if (q != p && out[q] < 0 && labels[q] == labels[start]) {
          out[q] = id;
          queue.push_back(q);
        }
      }
    }
  }
  return out;
}

}  // namespace

SuperpixelMap segment_grid(ImageSize size, std::size_t n_segments_target) {
  if (n_segments_target < 1 || size.height == 0 || size.width == 0) {
    throw Error(ErrorKind::InvalidConfig, "grid segmentation needs a target >= 1 and a nonempty image");
  }
  const double h = static_cast<double>(size.height), w = static_cast<double>(size.width);
  std::size_t rows = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n_segments_target) * h / w)));
  rows = std::clamp<std::size_t>(rows, 1, size.height);
  std::size_t cols = static_cast<std::size_t>(std::llround(static_cast<double>(n_segments_target) / static_cast<double>(rows)));
  cols = std::clamp<std::size_t>(cols, 1, size.width);
  const auto rb = boundaries(size.height, rows);
  const auto cb = boundaries(size.width, cols);
  SuperpixelMap map{size.height, size.width, std::vector<int>(size.height * size.width), rows * cols};
  for (std::size_t y = 0; y < size.height; ++y) {
    const std::size_t r = cell_of(rb, y);
    for (std::size_t x = 0; x < size.width; ++x) {
      map.labels[y * size.width + x] = static_cast<int>(r * cols + cell_of(cb, x));
    }
  }
  return map;
}

SuperpixelMap segment_slic(const Tensor& image, std::size_t n_segments_target) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw Error(ErrorKind::ShapeMismatch, "segment_slic needs an (H, W, 3) image");
  }
  const std::size_t h = image.dim(0), w = image.dim(1);
  cv::Mat rgb(static_cast<int>(h), static_cast<int>(w), CV_8UC3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      auto& px = rgb.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x));
      for (int c = 0; c < 3; ++c) {
        px[c] = static_cast<unsigned char>(std::lround(std::clamp(image.at(y, x, static_cast<std::size_t>(c)), 0.0, 1.0) * 255.0));
      }
    }
  }
  cv::Mat lab;
  cv::cvtColor(rgb, lab, cv::COLOR_RGB2Lab);
  const int region = std::max(2, static_cast<int>(std::lround(
                                      std::sqrt(static_cast<double>(h * w) / static_cast<double>(n_segments_target)))));
  auto slic = cv::ximgproc::createSuperpixelSLIC(lab, cv::ximgproc::SLICO, region, 10.0f);
  slic->iterate(10);
  cv::Mat raw;
  slic->getLabels(raw);

  std::vector<int> labels(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) labels[y * w + x] = raw.at<int>(static_cast<int>(y), static_cast<int>(x));
  }
  std::size_t count = 0;
  labels = connected_components(labels, h, w, count);

  // Fold fragments below a quarter of the nominal area into the component
  // met first in scan order (above, else left, else any neighbour).
  const std::size_t min_area = std::max<std::size_t>(1, h * w / (4 * n_segments_target));
  std::vector<std::size_t> area(count, 0);
  for (int l : labels) ++area[static_cast<std::size_t>(l)];
  std::vector<int> target(count);
  for (std::size_t i = 0; i < count; ++i) target[i] = static_cast<int>(i);
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const int l = labels[p];
    if (area[static_cast<std::size_t>(l)] >= min_area || target[static_cast<std::size_t>(l)] != l) continue;
    const std::size_t y = p / w, x = p % w;
    int into = -1;
    if (y > 0) into = labels[p - w];
    if ((into < 0 || into == l) && x > 0) into = labels[p - 1];
    if ((into < 0 || into == l) && x + 1 < w) into = labels[p + 1];
    if ((into < 0 || into == l) && y + 1 < h) into = labels[p + w];
    if (into >= 0 && into != l) target[static_cast<std::size_t>(l)] = into;
  }
  auto resolve = [&](int l) {
    for (std::size_t guard = 0; guard < count && target[static_cast<std::size_t>(l)] != l; ++guard) {
      l = target[static_cast<std::size_t>(l)];
    }
    return l;
  };
  for (auto& l : labels) l = resolve(l);
  labels = connected_components(labels, h, w, count);

  if (count * 2 < n_segments_target || count > 2 * n_segments_target) {
    return segment_grid({h, w}, n_segments_target);
  }
  return SuperpixelMap{h, w, std::move(labels), count};
}

std::string_view to_string(Segmenter segmenter) { return segmenter == Segmenter::Grid ? "grid" : "slic"; }

Segmenter parse_segmenter(std::string_view text) {
  if (text == "grid") return Segmenter::Grid;
  if (text == "slic") return Segmenter::Slic;
  throw Error(ErrorKind::InvalidConfig, "unknown segmenter '" + std::string(text) + "'");
}

SuperpixelMap segment(const Tensor& image, std::size_t n_segments_target, Segmenter segmenter) {
  if (n_segments_target < 2) throw Error(ErrorKind::InvalidConfig, "n_segments target must be >= 2");
  if (segmenter == Segmenter::Grid) return segment_grid({image.dim(0), image.dim(1)}, n_segments_target);
  return segment_slic(image, n_segments_target);
}

Tensor draw_masks(std::size_t n_samples, std::size_t n_segments, std::uint64_t seed) {
  Tensor masks({n_samples, n_segments}, 1.0);
  Rng rng(derive_seed({seed, 0x11e5u}));
  for (std::size_t i = 1; i < n_samples; ++i) {
    for (std::size_t s = 0; s < n_segments; ++s) masks.at(i, s) = rng.bernoulli(0.5) ? 1.0 : 0.0;
  }
  return masks;
}

double mean_intensity(const Tensor& image) {
  double sum = 0.0;
  for (double v : image.values()) sum += v;
  return image.size() ? sum / static_cast<double>(image.size()) : 0.0;
}

Tensor apply_mask(const Tensor& image, const SuperpixelMap& spmap, std::span<const double> mask, double fill) {
  if (image.rank() != 3 || image.dim(0) != spmap.height || image.dim(1) != spmap.width) {
    throw Error(ErrorKind::ShapeMismatch, "image " + shape_string(image.shape()) + " vs superpixel map");
  }
  if (mask.size() != spmap.n_segments) throw Error(ErrorKind::ShapeMismatch, "mask width vs segment count");
  Tensor out = image;
  const std::size_t channels = image.dim(2);
  for (std::size_t p = 0; p < spmap.labels.size(); ++p) {
    if (mask[static_cast<std::size_t>(spmap.labels[p])] == 0.0) {
      for (std::size_t c = 0; c < channels; ++c) out[p * channels + c] = fill;
    }
  }
  return out;
}

Perturbation perturb(const Tensor& image, const SuperpixelMap& spmap, std::size_t n_samples, std::uint64_t seed) {
  Perturbation out;
  out.masks = draw_masks(n_samples, spmap.n_segments, seed);
  const double fill = mean_intensity(image);
  std::vector<Tensor> images;
  images.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    images.push_back(apply_mask(image, spmap, out.masks.row(i).values(), fill));
  }
  out.images = Tensor::stack(images);
  return out;
}

std::vector<double> kernel_weights(const Tensor& masks, double kernel_width) {
  if (!(kernel_width > 0.0)) throw Error(ErrorKind::InvalidConfig, "kernel_width must be > 0");
  const std::size_t n = masks.dim(0), d = masks.dim(1);
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0, norm2 = 0.0;
    for (std::size_t s = 0; s < d; ++s) {
      dot += masks.at(i, s);
      norm2 += masks.at(i, s) * masks.at(i, s);
    }
    const double cosine = norm2 > 0.0 ? dot / (std::sqrt(norm2) * std::sqrt(static_cast<double>(d))) : 0.0;
    const double dist = 1.0 - cosine;
    w[i] = std::exp(-dist * dist / (kernel_width * kernel_width));
  }
  return w;
}

SurrogateFit fit_surrogate(const Tensor& masks, std::span<const double> targets, std::span<const double> weights,
                           double lambda) {
  const std::size_t n = masks.dim(0), d = masks.dim(1);
  if (targets.size() != n || weights.size() != n) {
    throw Error(ErrorKind::LengthMismatch, "surrogate needs one target and weight per mask row");
  }
  if (!(lambda >= 0.0)) throw Error(ErrorKind::InvalidConfig, "ridge lambda must be >= 0");
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw Error(ErrorKind::SingularSystem, "sample weights sum to zero");

  Eigen::VectorXd w(n), y(n);
  Eigen::MatrixXd X(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    w(static_cast<Eigen::Index>(i)) = weights[i] / total;
    y(static_cast<Eigen::Index>(i)) = targets[i];
    for (std::size_t s = 0; s < d; ++s) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s)) = masks.at(i, s);
  }
  // Weighted centring removes the intercept from the penalised system.
  const Eigen::RowVectorXd x_mean = w.transpose() * X;
  const double y_mean = w.dot(y);
  const Eigen::MatrixXd Xc = X.rowwise() - x_mean;
  const Eigen::VectorXd yc = y.array() - y_mean;
  Eigen::MatrixXd A = Xc.transpose() * w.asDiagonal() * Xc;
  A.diagonal().array() += lambda;
  const Eigen::VectorXd b = Xc.transpose() * w.asDiagonal() * yc;

  Eigen::VectorXd beta;
  if (lambda == 0.0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    if (qr.rank() < static_cast<Eigen::Index>(d)) {
      throw Error(ErrorKind::SingularSystem, "rank-deficient surrogate system without ridge term");
    }
    beta = qr.solve(b);
  } else {
    beta = A.ldlt().solve(b);
  }

  SurrogateFit fit;
  fit.coefficients.assign(beta.data(), beta.data() + beta.size());
  fit.intercept = y_mean - x_mean.dot(beta);
  const Eigen::VectorXd residual = yc - Xc * beta;
  const double ss_res = w.dot(residual.cwiseProduct(residual));
  const double ss_tot = w.dot(yc.cwiseProduct(yc));
  if (ss_tot <= 1e-300) {
    fit.degenerate_target = true;
    fit.r2 = 0.0;
  } else {
    fit.r2 = 1.0 - ss_res / ss_tot;
  }
  return fit;
}

void LimeConfig::validate() const {
  if (n_segments < 2) throw Error(ErrorKind::InvalidConfig, "lime n_segments must be >= 2");
  if (!(kernel_width > 0.0)) throw Error(ErrorKind::InvalidConfig, "lime kernel_width must be > 0");
  if (!(ridge_lambda >= 0.0)) throw Error(ErrorKind::InvalidConfig, "lime ridge_lambda must be >= 0");
  if (batch_size < 1) throw Error(ErrorKind::InvalidConfig, "lime batch_size must be >= 1");
}

Json to_json(const LimeConfig& cfg) {
  return Json{{"n_segments", cfg.n_segments},   {"n_samples", cfg.n_samples},
              {"kernel_width", cfg.kernel_width}, {"top_k", cfg.top_k},
              {"seed", cfg.seed},                 {"ridge_lambda", cfg.ridge_lambda},
              {"segmenter", to_string(cfg.segmenter)}, {"low_fidelity_r2", cfg.low_fidelity_r2},
              {"batch_size", cfg.batch_size}};
}

LimeConfig lime_config_from_json(const Json& j) {
  require_known_keys(j,
                     {"n_segments", "n_samples", "kernel_width", "top_k", "seed", "ridge_lambda", "segmenter",
                      "low_fidelity_r2", "batch_size"},
                     "lime");
  LimeConfig cfg;
  try {
    cfg.n_segments = j.value("n_segments", cfg.n_segments);
    cfg.n_samples = j.value("n_samples", cfg.n_samples);
    cfg.kernel_width = j.value("kernel_width", cfg.kernel_width);
    cfg.top_k = j.value("top_k", cfg.top_k);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.ridge_lambda = j.value("ridge_lambda", cfg.ridge_lambda);
    if (j.contains("segmenter")) cfg.segmenter = parse_segmenter(j.at("segmenter").get<std::string>());
    cfg.low_fidelity_r2 = j.value("low_fidelity_r2", cfg.low_fidelity_r2);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("lime: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExplanationResult explain_with_map(const PredictFn& predict, const Tensor& image, const SuperpixelMap& spmap,
                                   std::size_t target_class, const LimeConfig& cfg) {
  cfg.validate();
  const std::size_t n_samples = std::max(cfg.n_samples, spmap.n_segments + 2);
  const Tensor masks = draw_masks(n_samples, spmap.n_segments, cfg.seed);
  const double fill = mean_intensity(image);

  std::vector<double> targets;
  targets.reserve(n_samples);
  for (std::size_t begin = 0; begin < n_samples; begin += cfg.batch_size) {
    const std::size_t end = std::min(n_samples, begin + cfg.batch_size);
    std::vector<Tensor> chunk;
    for (std::size_t i = begin; i < end; ++i) chunk.push_back(apply_mask(image, spmap, masks.row(i).values(), fill));
    const Tensor probs = predict(Tensor::stack(chunk));
    if (probs.rank() != 2 || probs.dim(0) != end - begin || target_class >= probs.dim(1)) {
      throw Error(ErrorKind::ShapeMismatch, "predict returned " + shape_string(probs.shape()) + " for target class " +
                                                std::to_string(target_class));
    }
    for (std::size_t i = 0; i < probs.dim(0); ++i) targets.push_back(probs.at(i, target_class));
  }

  const auto weights = kernel_weights(masks, cfg.kernel_width);
  const auto fit = fit_surrogate(masks, targets, weights, cfg.ridge_lambda);

  ExplanationResult result;
  result.target_class = target_class;
  result.segment_weights = fit.coefficients;
  result.intercept = fit.intercept;
  result.local_fidelity_r2 = fit.r2;
  result.low_fidelity = fit.degenerate_target || fit.r2 < cfg.low_fidelity_r2;
  result.n_segments = spmap.n_segments;
  std::vector<std::size_t> order(spmap.n_segments);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return fit.coefficients[a] > fit.coefficients[b];
  });
  for (std::size_t i = 0; i < std::min(cfg.top_k, order.size()); ++i) {
    result.top_k.emplace_back(order[i], fit.coefficients[order[i]]);
  }
  return result;
}

ExplanationResult explain(const PredictFn& predict, const Tensor& image, std::size_t target_class,
                          const LimeConfig& cfg, SuperpixelMap* spmap_out) {
  SuperpixelMap spmap = segment(image, cfg.n_segments, cfg.segmenter);
  auto result = explain_with_map(predict, image, spmap, target_class, cfg);
  if (spmap_out) *spmap_out = std::move(spmap);
  return result;
}

Tensor render_overlay(const Tensor& image, const SuperpixelMap& spmap, const ExplanationResult& explanation,
                      std::size_t top_k, std::array<double, 3> tint, double alpha, std::array<double, 3> contour) {
  if (image.rank() != 3 || image.dim(2) != 3 || image.dim(0) != spmap.height || image.dim(1) != spmap.width) {
    throw Error(ErrorKind::ShapeMismatch, "overlay image does not match the superpixel map");
  }
  if (explanation.segment_weights.size() != spmap.n_segments) {
    throw Error(ErrorKind::ShapeMismatch, "explanation does not match the superpixel map");
  }
  std::vector<char> highlighted(spmap.n_segments, 0);
  std::size_t taken = 0;
  for (const auto& [segment_id, weight] : explanation.top_k) {
    if (taken == top_k) break;
    if (weight > 0.0) {
      highlighted[segment_id] = 1;
      ++taken;
    }
  }
  Tensor out = image;
  const std::size_t h = spmap.height, w = spmap.width;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const int l = spmap.at(y, x);
      if (!highlighted[static_cast<std::size_t>(l)]) continue;
      const bool edge = (y > 0 && spmap.at(y - 1, x) != l) || (y + 1 < h && spmap.at(y + 1, x) != l) ||
                        (x > 0 && spmap.at(y, x - 1) != l) || (x + 1 < w && spmap.at(y, x + 1) != l);
      for (std::size_t c = 0; c < 3; ++c) {
        out.at(y, x, c) = edge ? contour[c] : (1.0 - alpha) * image.at(y, x, c) + alpha * tint[c];
      }
    }
  }
  return out;
}

Json to_json(const ExplanationResult& result) {
  Json top = Json::array();
  for (const auto& [id, weight] : result.top_k) top.push_back(Json{{"segment", id}, {"weight", weight}});
  return Json{{"target_class", result.target_class},
              {"n_segments", result.n_segments},
              {"segment_weights", result.segment_weights},
              {"intercept", result.intercept},
              {"top_k", top},
              {"local_fidelity_r2", result.local_fidelity_r2},
              {"low_fidelity", result.low_fidelity}};
}

}  // namespace ckd
