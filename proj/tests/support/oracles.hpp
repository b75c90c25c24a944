#pragma once

// Independent reference implementations used by unit and acceptance tests.
// They share no code with the library beyond plain containers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

inline std::vector<std::vector<std::size_t>> confusion(const std::vector<std::size_t>& t,
                                                       const std::vector<std::size_t>& p, std::size_t k) {
  std::vector<std::vector<std::size_t>> cm(k, std::vector<std::size_t>(k, 0));
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] == a && p[i] == b) ++cm[a][b];
      }
    }
  }
  return cm;
}

struct Prf {
  double precision, recall, f1;
};

inline Prf class_prf(const std::vector<std::size_t>& t, const std::vector<std::size_t>& p, std::size_t c) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (p[i] == c && t[i] == c) tp += 1;
    if (p[i] == c && t[i] != c) fp += 1;
    if (p[i] != c && t[i] == c) fn += 1;
  }
  const double pr = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  const double rc = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  const double f = pr + rc > 0 ? 2 * pr * rc / (pr + rc) : 0.0;
  return {pr, rc, f};
}

// Probability that a random positive outscores a random negative, ties 1/2.
inline double pairwise_auc(const std::vector<int>& labels, const std::vector<double>& scores) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1;
      if (scores[i] > scores[j]) wins += 1;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// (recall, precision) at each distinct threshold, highest first, by recount.
inline std::vector<std::pair<double, double>> pr_points(const std::vector<int>& labels,
                                                        const std::vector<double>& scores) {
  std::vector<double> thresholds = scores;
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double positives = 0;
  for (int l : labels) positives += l;
  std::vector<std::pair<double, double>> out;
  for (double th : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (scores[i] >= th) (labels[i] ? tp : fp) += 1;
    }
    out.emplace_back(tp / positives, tp / (tp + fp));
  }
  return out;
}

inline double cross_entropy(const std::vector<std::vector<double>>& p, const std::vector<std::vector<double>>& y) {
  double total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t c = 0; c < p[i].size(); ++c) total -= y[i][c] * std::log(std::max(p[i][c], 1e-12));
  }
  return total / static_cast<double>(p.size());
}

// Solves (X^T W X + lambda*I_beta) [beta; b0] = X^T W y by Gaussian
// elimination with partial pivoting; weights are normalised to sum 1.
inline std::vector<double> weighted_ridge(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                                          std::vector<double> w, double lambda) {
  const std::size_t n = x.size(), d = x.front().size(), m = d + 1;
  double ws = 0;
  for (double v : w) ws += v;
  for (double& v : w) v /= ws;
  std::vector<std::vector<double>> a(m, std::vector<double>(m + 1, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row = x[i];
    row.push_back(1.0);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < m; ++c) a[r][c] += w[i] * row[r] * row[c];
      a[r][m] += w[i] * row[r] * y[i];
    }
  }
  for (std::size_t r = 0; r < d; ++r) a[r][r] += lambda;
  for (std::size_t col = 0; col < m; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < m; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    }
    std::swap(a[col], a[piv]);
    for (std::size_t r = 0; r < m; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c <= m; ++c) a[r][c] -= f * a[col][c];
    }
  }
  std::vector<double> sol(m);
  for (std::size_t r = 0; r < m; ++r) sol[r] = a[r][m] / a[r][r];
  return sol;  // coefficients then intercept
}

// Unique scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("ckd_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& sub) const { return path_ / sub; }

 private:
  std::filesystem::path path_;
};

}  // namespace oracle
