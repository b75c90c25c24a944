#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ckd/batch_stream.hpp"
#include "ckd/dataset.hpp"
#include "ckd/model_zoo.hpp"
#include "ckd/serialization.hpp"

namespace ckd {

/// K x K counts; rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t k) : k_(k), counts_(k * k, 0) {}

  std::size_t num_classes() const { return k_; }
  std::size_t& at(std::size_t truth, std::size_t pred) { return counts_[truth * k_ + pred]; }
  std::size_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * k_ + pred]; }

  std::size_t total() const;
  std::size_t row_sum(std::size_t truth) const;
  std::size_t col_sum(std::size_t pred) const;
  std::size_t trace() const;
  double accuracy() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t k_ = 0;
  std::vector<std::size_t> counts_;
};

// LengthMismatch for unequal lengths, IndexOutOfRange for labels >= k.
ConfusionMatrix confusion_matrix(std::span<const std::size_t> y_true,
                                 std::span<const std::size_t> y_pred, std::size_t k);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct PerClassResult {
  std::vector<ClassMetrics> classes;
  // One entry per zero denominator, e.g. "class 2: no predicted positives".
  std::vector<std::string> warnings;
};

// Harmonic mean; 0 when p + r == 0.
double f1_score(double precision, double recall);

PerClassResult per_class_metrics(const ConfusionMatrix& cm);

// Unweighted mean; LengthMismatch on empty input.
double macro_average(std::span<const double> values);
// Support-weighted mean.
double weighted_average(std::span<const double> values, std::span<const std::size_t> weights);

struct CurvePoint {
  double x = 0.0;
  double y = 0.0;
  std::optional<double> threshold;  // absent for the (0, 0) ROC start

  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

struct RocResult {
  std::vector<CurvePoint> points;  // (fpr, tpr)
  double auc = 0.0;
};

// Thresholds sweep the distinct scores in descending order, equal scores
// forming one step. SingleClass if only one label value is present.
RocResult roc_auc(std::span<const int> labels, std::span<const double> scores);

// (recall, precision) per threshold, same sweep as roc_auc.
std::vector<CurvePoint> pr_curve(std::span<const int> labels, std::span<const double> scores);

// Step-wise area sum_i (r_i - r_{i-1}) * p_i with r_0 = 0.
double average_precision(std::span<const CurvePoint> pr_points);

struct ClassReport {
  std::string name;
  ClassMetrics metrics;
  std::optional<double> auc;
  std::optional<double> average_precision;
  std::vector<CurvePoint> roc;
  std::vector<CurvePoint> pr;
};

struct AverageMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> auc;
};

struct EvaluationReport {
  std::vector<ClassReport> per_class;
  AverageMetrics macro;
  AverageMetrics weighted;
  double accuracy = 0.0;
  std::size_t num_samples = 0;
  ConfusionMatrix confusion;
  std::vector<std::string> warnings;
};

// y_pred = argmax per row; class c's AUC uses probability column c.
EvaluationReport build_report(const Tensor& probs, std::span<const std::size_t> y_true,
                              const LabelCodec& codec);

EvaluationReport evaluate(const Classifier& model, const BatchSource& stream, const LabelCodec& codec);

Json to_json(const EvaluationReport& report);
EvaluationReport report_from_json(const Json& j);

// Round half away from zero at `digits` decimals, tolerant of binary
// representation error (0.125 -> 0.13, 0.8725 -> 0.87 at 2 dp).
double round_half_up(double value, int digits);
std::string format_fixed(double value, int digits);

std::string report_csv(const EvaluationReport& report);
std::string curve_csv(const std::vector<CurvePoint>& points, const char* x_name, const char* y_name);

// report.json, report.csv, roc_<class>.csv and pr_<class>.csv under dir.
void write_report_files(const EvaluationReport& report, const std::filesystem::path& dir);

}  // namespace ckd
