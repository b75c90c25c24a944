#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "ckd/error.hpp"
#include "ckd/lime.hpp"
#include "ckd/rng.hpp"
#include "oracles.hpp"

using namespace ckd;

namespace {

Tensor random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({h, w, 3});
  for (auto& v : t.values()) v = rng.uniform();
  return t;
}

// Target-class probability is affine in per-segment mean intensity.
struct LinearOracle {
  SuperpixelMap spmap;
  std::vector<double> coef;
  double bias;

  double prob(const Tensor& img) const {
    std::vector<double> sum(spmap.n_segments, 0.0), count(spmap.n_segments, 0.0);
    for (std::size_t y = 0; y < spmap.height; ++y) {
      for (std::size_t x = 0; x < spmap.width; ++x) {
        const auto s = static_cast<std::size_t>(spmap.at(y, x));
        for (std::size_t c = 0; c < 3; ++c) sum[s] += img.at(y, x, c);
        count[s] += 3;
      }
    }
    double p = bias;
    for (std::size_t s = 0; s < coef.size(); ++s) p += coef[s] * sum[s] / count[s];
    return p;
  }

  Tensor operator()(const Tensor& batch) const {
    const std::size_t n = batch.dim(0);
    Tensor out({n, 2});
    for (std::size_t i = 0; i < n; ++i) {
      const double p = prob(batch.row(i).reshaped({spmap.height, spmap.width, 3}));
      out.at(i, 0) = 1.0 - p;
      out.at(i, 1) = p;
    }
    return out;
  }
};

LinearOracle make_oracle(const Tensor& img, std::size_t target, std::uint64_t seed) {
  LinearOracle o{segment_grid({img.dim(0), img.dim(1)}, target), {}, 0.3};
  Rng rng(seed);
  for (std::size_t s = 0; s < o.spmap.n_segments; ++s) o.coef.push_back(rng.uniform(-0.05, 0.05));
  return o;
}

std::vector<std::vector<double>> rows_of(const Tensor& m) {
  std::vector<std::vector<double>> out(m.dim(0), std::vector<double>(m.dim(1)));
  for (std::size_t i = 0; i < m.dim(0); ++i) {
    for (std::size_t j = 0; j < m.dim(1); ++j) out[i][j] = m.at(i, j);
  }
  return out;
}

bool four_connected(const SuperpixelMap& map, int id) {
  std::vector<std::pair<std::size_t, std::size_t>> stack;
  std::vector<char> seen(map.labels.size(), 0);
  std::size_t total = 0;
  for (std::size_t i = 0; i < map.labels.size(); ++i) {
    if (map.labels[i] != id) continue;
    ++total;
    if (stack.empty() && !seen[i]) {
      stack.emplace_back(i / map.width, i % map.width);
      seen[i] = 1;
    }
  }
  std::size_t reached = 0;
  while (!stack.empty()) {
    auto [y, x] = stack.back();
    stack.pop_back();
    ++reached;
    const long dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
    for (int k = 0; k < 4; ++k) {
      const long ny = static_cast<long>(y) + dy[k], nx = static_cast<long>(x) + dx[k];
      if (ny < 0 || nx < 0 || ny >= static_cast<long>(map.height) || nx >= static_cast<long>(map.width)) continue;
      const std::size_t j = static_cast<std::size_t>(ny) * map.width + static_cast<std::size_t>(nx);
      if (!seen[j] && map.labels[j] == id) {
        seen[j] = 1;
        stack.emplace_back(ny, nx);
      }
    }
  }
  return reached == total;
}

}  // namespace

TEST(Lime, GridQuadrants) {
  const auto map = segment_grid({4, 4}, 4);
  ASSERT_EQ(map.n_segments, 4u);
  const int expected[4][4] = {{0, 0, 1, 1}, {0, 0, 1, 1}, {2, 2, 3, 3}, {2, 2, 3, 3}};
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 4; ++x) EXPECT_EQ(map.at(y, x), expected[y][x]);
  }
}

TEST(Lime, GridEqualShares) {
  const auto exact = segment_grid({48, 32}, 6);
  for (auto a : exact.areas()) EXPECT_EQ(a, 48u * 32u / 6u);
  // Non-divisible sides: every cell side is within one pixel of the others.
  const auto map = segment_grid({37, 29}, 12);
  std::vector<std::size_t> row_len, col_len;
  std::size_t run = 1;
  for (std::size_t y = 1; y <= map.height; ++y) {
    if (y == map.height || map.at(y, 0) != map.at(y - 1, 0)) {
      row_len.push_back(run);
      run = 1;
    } else {
      ++run;
    }
  }
  run = 1;
  for (std::size_t x = 1; x <= map.width; ++x) {
    if (x == map.width || map.at(0, x) != map.at(0, x - 1)) {
      col_len.push_back(run);
      run = 1;
    } else {
      ++run;
    }
  }
  EXPECT_LE(*std::max_element(row_len.begin(), row_len.end()) - *std::min_element(row_len.begin(), row_len.end()), 1u);
  EXPECT_LE(*std::max_element(col_len.begin(), col_len.end()) - *std::min_element(col_len.begin(), col_len.end()), 1u);
}

TEST(Lime, SlicContract) {
  // Smooth blobs give the clustering something to follow.
  Tensor img({64, 64, 3});
  for (std::size_t y = 0; y < 64; ++y) {
    for (std::size_t x = 0; x < 64; ++x) {
      const double v = 0.5 + 0.4 * std::sin(static_cast<double>(x) / 6.0) * std::cos(static_cast<double>(y) / 9.0);
      img.at(y, x, 0) = v;
      img.at(y, x, 1) = 1.0 - v;
      img.at(y, x, 2) = 0.3;
    }
  }
  for (std::size_t target : {8u, 20u, 50u}) {
    const auto map = segment_slic(img, target);
    EXPECT_GE(map.n_segments * 2, target);
    EXPECT_LE(map.n_segments, 2 * target);
    std::set<int> ids(map.labels.begin(), map.labels.end());
    ASSERT_EQ(ids.size(), map.n_segments);
    EXPECT_EQ(*ids.begin(), 0);
    EXPECT_EQ(*ids.rbegin(), static_cast<int>(map.n_segments) - 1);
    for (int id : ids) EXPECT_TRUE(four_connected(map, id)) << "segment " << id;
    EXPECT_EQ(segment_slic(img, target).labels, map.labels);
  }
  EXPECT_THROW(segment(img, 1, Segmenter::Grid), Error);
}

TEST(Lime, MasksAndPerturbation) {
  const Tensor img = random_image(16, 32, 1);
  const auto map = segment_grid({16, 32}, 8);
  ASSERT_EQ(map.n_segments, 8u);
  const Tensor masks = draw_masks(1000, 8, 3);
  for (std::size_t s = 0; s < 8; ++s) EXPECT_EQ(masks.at(0, s), 1.0);
  for (std::size_t s = 0; s < 8; ++s) {
    double kept = 0;
    for (std::size_t i = 0; i < 1000; ++i) kept += masks.at(i, s);
    EXPECT_GE(kept / 1000.0, 0.45);
    EXPECT_LE(kept / 1000.0, 0.55);
  }
  EXPECT_EQ(draw_masks(50, 8, 3), draw_masks(50, 8, 3));

  const std::vector<double> ones(8, 1.0), zeros(8, 0.0);
  EXPECT_EQ(apply_mask(img, map, ones, 0.5), img);
  const double fill = mean_intensity(img);
  const Tensor blank = apply_mask(img, map, zeros, fill);
  for (double v : blank.values()) EXPECT_EQ(v, fill);

  const auto pert = perturb(img, map, 20, 4);
  EXPECT_EQ(pert.images.shape(), (Shape{20, 16, 32, 3}));
  EXPECT_EQ(pert.images.row(0).reshaped({16, 32, 3}), img);
}

TEST(Lime, KernelWeights) {
  const double sigma = 0.25;
  Tensor masks({3, 8}, 1.0);
  for (std::size_t s = 0; s < 8; ++s) masks.at(1, s) = 0.0;
  for (std::size_t s = 0; s < 4; ++s) masks.at(2, s) = 0.0;
  const auto w = kernel_weights(masks, sigma);
  EXPECT_DOUBLE_EQ(w[0], 1.0);
  EXPECT_NEAR(w[1], std::exp(-1.0 / (sigma * sigma)), 1e-15);
  const double d = 1.0 - 4.0 / std::sqrt(8.0 * 4.0);
  EXPECT_NEAR(d, 1.0 - 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(w[2], std::exp(-d * d / (sigma * sigma)), 1e-15);
}

TEST(Lime, SurrogateRecoversLinearTarget) {
  const std::size_t d = 6;
  const Tensor masks = draw_masks(200, d, 9);
  std::vector<double> y;
  for (std::size_t i = 0; i < 200; ++i) y.push_back(2.0 * masks.at(i, 0) - 1.0 * masks.at(i, 1) + 0.5);
  const auto w = kernel_weights(masks, 0.25);
  const auto fit = fit_surrogate(masks, y, w, 1e-9);
  EXPECT_NEAR(fit.coefficients[0], 2.0, 1e-4);
  EXPECT_NEAR(fit.coefficients[1], -1.0, 1e-4);
  for (std::size_t s = 2; s < d; ++s) EXPECT_NEAR(fit.coefficients[s], 0.0, 1e-4);
  EXPECT_NEAR(fit.intercept, 0.5, 1e-4);
  EXPECT_NEAR(fit.r2, 1.0, 1e-9);

  // Weight scaling leaves the normalised objective unchanged.
  std::vector<double> w10 = w;
  for (auto& v : w10) v *= 10.0;
  const auto a = fit_surrogate(masks, y, w, 1e-3), b = fit_surrogate(masks, y, w10, 1e-3);
  for (std::size_t s = 0; s < d; ++s) EXPECT_NEAR(a.coefficients[s], b.coefficients[s], 1e-12);
}

TEST(Lime, SurrogateMatchesNormalEquations) {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 3 + rng.below(6);
    const Tensor masks = draw_masks(40 + rng.below(40), d, rng.next_u64());
    std::vector<double> y, w;
    for (std::size_t i = 0; i < masks.dim(0); ++i) {
      y.push_back(rng.normal());
      w.push_back(0.1 + rng.uniform());
    }
    const double lambda = 1e-3;
    const auto fit = fit_surrogate(masks, y, w, lambda);
    const auto ref = oracle::weighted_ridge(rows_of(masks), y, w, lambda);
    for (std::size_t s = 0; s < d; ++s) EXPECT_NEAR(fit.coefficients[s], ref[s], 1e-8);
    EXPECT_NEAR(fit.intercept, ref[d], 1e-8);
  }
}

TEST(Lime, SurrogateConstantAndSingular) {
  const Tensor masks = draw_masks(30, 4, 2);
  const std::vector<double> y(30, 0.7), w(30, 1.0);
  const auto fit = fit_surrogate(masks, y, w);
  for (double c : fit.coefficients) EXPECT_NEAR(c, 0.0, 1e-12);
  EXPECT_NEAR(fit.intercept, 0.7, 1e-12);
  EXPECT_TRUE(fit.degenerate_target);

  Tensor dup({10, 2});
  for (std::size_t i = 0; i < 10; ++i) dup.at(i, 0) = dup.at(i, 1) = static_cast<double>(i % 2);
  std::vector<double> yy(10), ww(10, 1.0);
  for (std::size_t i = 0; i < 10; ++i) yy[i] = static_cast<double>(i);
  try {
    fit_surrogate(dup, yy, ww, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SingularSystem);
  }
  EXPECT_NO_THROW(fit_surrogate(dup, yy, ww, 1e-3));
}

TEST(Lime, ExplainLinearOracle) {
  const Tensor img = random_image(24, 24, 5);
  const auto oracle_model = make_oracle(img, 9, 6);
  LimeConfig cfg;
  cfg.segmenter = Segmenter::Grid;
  cfg.n_segments = 9;
  cfg.n_samples = 300;
  cfg.ridge_lambda = 1e-9;
  cfg.seed = 3;
  SuperpixelMap map;
  const auto res = explain(std::cref(oracle_model), img, 1, cfg, &map);
  ASSERT_EQ(map.labels, oracle_model.spmap.labels);

  const double fill = mean_intensity(img);
  std::vector<double> truth;
  for (std::size_t s = 0; s < 9; ++s) {
    double m = 0, n = 0;
    for (std::size_t y = 0; y < 24; ++y) {
      for (std::size_t x = 0; x < 24; ++x) {
        if (map.at(y, x) != static_cast<int>(s)) continue;
        for (std::size_t c = 0; c < 3; ++c) m += img.at(y, x, c);
        n += 3;
      }
    }
    truth.push_back(oracle_model.coef[s] * (m / n - fill));
  }
  for (std::size_t s = 0; s < 9; ++s) EXPECT_NEAR(res.segment_weights[s], truth[s], 1e-4);
  const auto best = static_cast<std::size_t>(std::max_element(truth.begin(), truth.end()) - truth.begin());
  ASSERT_FALSE(res.top_k.empty());
  EXPECT_EQ(res.top_k[0].first, best);
  for (std::size_t i = 1; i < res.top_k.size(); ++i) EXPECT_GE(res.top_k[i - 1].second, res.top_k[i].second);

  std::vector<double> mask(9, 1.0);
  mask[best] = 0.0;
  EXPECT_LT(oracle_model.prob(apply_mask(img, map, mask, fill)), oracle_model.prob(img));
  // Removing any positive-weight segment never raises the target probability.
  for (std::size_t s = 0; s < 9; ++s) {
    if (truth[s] <= 0) continue;
    std::vector<double> m(9, 1.0);
    m[s] = 0.0;
    EXPECT_LE(oracle_model.prob(apply_mask(img, map, m, fill)), oracle_model.prob(img));
  }

  EXPECT_EQ(dump_json(to_json(explain(std::cref(oracle_model), img, 1, cfg))), dump_json(to_json(res)));
}

TEST(Lime, ConstantModelHasNoSignal) {
  const Tensor img = random_image(20, 20, 8);
  LimeConfig cfg;
  cfg.segmenter = Segmenter::Grid;
  cfg.n_segments = 16;
  cfg.n_samples = 100;
  const auto res = explain([](const Tensor& b) { return Tensor({b.dim(0), 3}, 1.0 / 3.0); }, img, 0, cfg);
  for (double c : res.segment_weights) EXPECT_LT(std::abs(c), 1e-3);
  EXPECT_TRUE(res.low_fidelity);
}

TEST(Lime, SampleCountCoversSegments) {
  const Tensor img = random_image(20, 20, 8);
  LimeConfig cfg;
  cfg.segmenter = Segmenter::Grid;
  cfg.n_segments = 16;
  cfg.n_samples = 3;  // raised to n_segments + 2 internally
  std::size_t calls = 0;
  explain(
      [&](const Tensor& b) {
        calls += b.dim(0);
        return Tensor({b.dim(0), 2}, 0.5);
      },
      img, 0, cfg);
  EXPECT_EQ(calls, 18u);
}

TEST(Lime, OverlayContract) {
  const Tensor img = random_image(12, 12, 2);
  const auto map = segment_grid({12, 12}, 4);
  ExplanationResult res;
  res.n_segments = 4;
  res.segment_weights = {0.3, -0.2, 0.1, 0.0};
  res.top_k = {{0, 0.3}, {2, 0.1}, {3, 0.0}, {1, -0.2}};
  EXPECT_EQ(render_overlay(img, map, res, 0), img);

  const Tensor out = render_overlay(img, map, res, 2);
  for (std::size_t y = 0; y < 12; ++y) {
    for (std::size_t x = 0; x < 12; ++x) {
      const int s = map.at(y, x);
      for (std::size_t c = 0; c < 3; ++c) {
        if (s == 1 || s == 3) {
          ASSERT_EQ(out.at(y, x, c), img.at(y, x, c));
        }
      }
      if (s == 0 || s == 2) EXPECT_NE(out.at(y, x, 2), img.at(y, x, 2));
    }
  }

  SuperpixelMap whole{5, 5, std::vector<int>(25, 0), 1};
  ExplanationResult one;
  one.n_segments = 1;
  one.segment_weights = {0.5};
  one.top_k = {{0, 0.5}};
  const Tensor base = random_image(5, 5, 3);
  const Tensor tinted = render_overlay(base, whole, one, 1);
  const double tint[3] = {1.0, 1.0, 0.0};
  for (std::size_t i = 0; i < 25; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_NEAR(tinted[i * 3 + c], 0.6 * base[i * 3 + c] + 0.4 * tint[c], 1e-12);
    }
  }
}

TEST(Lime, ConfigDefaults) {
  LimeConfig cfg;
  EXPECT_EQ(cfg.n_segments, 50u);
  EXPECT_EQ(cfg.n_samples, 1000u);
  EXPECT_EQ(cfg.kernel_width, 0.25);
  EXPECT_EQ(cfg.top_k, 5u);
  EXPECT_EQ(cfg.ridge_lambda, 1e-3);
  const auto back = lime_config_from_json(to_json(cfg));
  EXPECT_EQ(dump_json(to_json(back)), dump_json(to_json(cfg)));
  cfg.kernel_width = 0;
  EXPECT_THROW(cfg.validate(), Error);
}
