#include "ckd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "ckd/error.hpp"

namespace ckd {

std::size_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0});
}

std::size_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < k_; ++p) s += at(truth, p);
  return s;
}

std::size_t ConfusionMatrix::col_sum(std::size_t pred) const {
  std::size_t s = 0;
  for (std::size_t t = 0; t < k_; ++t) s += at(t, pred);
  return s;
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t s = 0;
  for (std::size_t c = 0; c < k_; ++c) s += at(c, c);
  return s;
}

double ConfusionMatrix::accuracy() const {
  const std::size_t n = total();
  return n == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(n);
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> y_true,
                                 std::span<const std::size_t> y_pred, std::size_t k) {
  if (y_true.size() != y_pred.size()) {
    throw Error(ErrorKind::LengthMismatch, std::to_string(y_true.size()) + " labels vs " +
                                               std::to_string(y_pred.size()) + " predictions");
  }
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] >= k || y_pred[i] >= k) {
      throw Error(ErrorKind::IndexOutOfRange, "label at position " + std::to_string(i) + " >= " + std::to_string(k));
    }
    ++cm.at(y_true[i], y_pred[i]);
  }
  return cm;
}

double f1_score(double precision, double recall) {
  const double denom = precision + recall;
  return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

PerClassResult per_class_metrics(const ConfusionMatrix& cm) {
  PerClassResult out;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    const std::size_t tp = cm.at(c, c);
    const std::size_t predicted = cm.col_sum(c);
    const std::size_t actual = cm.row_sum(c);
    ClassMetrics m;
    m.support = actual;
    if (predicted == 0) {
      out.warnings.push_back("class " + std::to_string(c) + ": no predicted positives, precision set to 0");
    } else {
      m.precision = static_cast<double>(tp) / static_cast<double>(predicted);
    }
    if (actual == 0) {
      out.warnings.push_back("class " + std::to_string(c) + ": no true samples, recall set to 0");
    } else {
      m.recall = static_cast<double>(tp) / static_cast<double>(actual);
    }
    m.f1 = f1_score(m.precision, m.recall);
    out.classes.push_back(m);
  }
  return out;
}

double macro_average(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorKind::LengthMismatch, "macro average of nothing");
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double weighted_average(std::span<const double> values, std::span<const std::size_t> weights) {
  if (values.size() != weights.size() || values.empty()) {
    throw Error(ErrorKind::LengthMismatch, "weighted average needs matching nonempty inputs");
  }
  double sum = 0.0, total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    sum += values[i] * static_cast<double>(weights[i]);
    total += static_cast<double>(weights[i]);
  }
  return total > 0.0 ? sum / total : 0.0;
}

namespace {

struct Sweep {
  std::size_t positives = 0, negatives = 0;
  // Cumulative (tp, fp, threshold) after each distinct-score group.
  std::vector<std::size_t> tp, fp;
  std::vector<double> thresholds;
};

Sweep sweep(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) {
    throw Error(ErrorKind::LengthMismatch, std::to_string(labels.size()) + " labels vs " +
                                               std::to_string(scores.size()) + " scores");
  }
  Sweep s;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!std::isfinite(scores[i])) throw Error(ErrorKind::InvalidConfig, "non-finite score");
    (labels[i] != 0 ? s.positives : s.negatives) += 1;
  }
  if (s.positives == 0 || s.negatives == 0) {
    throw Error(ErrorKind::SingleClass, "both label values are needed for a curve");
  }
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double threshold = scores[order[i]];
    while (i < order.size() && scores[order[i]] == threshold) {
      (labels[order[i]] != 0 ? tp : fp) += 1;
      ++i;
    }
    s.tp.push_back(tp);
    s.fp.push_back(fp);
    s.thresholds.push_back(threshold);
  }
  return s;
}

}  // namespace

RocResult roc_auc(std::span<const int> labels, std::span<const double> scores) {
  const Sweep s = sweep(labels, scores);
  RocResult out;
  out.points.push_back({0.0, 0.0, std::nullopt});
  const double P = static_cast<double>(s.positives), N = static_cast<double>(s.negatives);
  for (std::size_t g = 0; g < s.tp.size(); ++g) {
    out.points.push_back({static_cast<double>(s.fp[g]) / N, static_cast<double>(s.tp[g]) / P, s.thresholds[g]});
  }
  for (std::size_t i = 1; i < out.points.size(); ++i) {
    const auto& a = out.points[i - 1];
    const auto& b = out.points[i];
    out.auc += (b.x - a.x) * (a.y + b.y) / 2.0;
  }
  return out;
}

std::vector<CurvePoint> pr_curve(std::span<const int> labels, std::span<const double> scores) {
  const Sweep s = sweep(labels, scores);
  std::vector<CurvePoint> out;
  for (std::size_t g = 0; g < s.tp.size(); ++g) {
    const double tp = static_cast<double>(s.tp[g]);
    out.push_back({tp / static_cast<double>(s.positives), tp / static_cast<double>(s.tp[g] + s.fp[g]),
                   s.thresholds[g]});
  }
  return out;
}

double average_precision(std::span<const CurvePoint> pr_points) {
  double ap = 0.0, prev_recall = 0.0;
  for (const auto& p : pr_points) {
    ap += (p.x - prev_recall) * p.y;
    prev_recall = p.x;
  }
  return ap;
}

EvaluationReport build_report(const Tensor& probs, std::span<const std::size_t> y_true,
                              const LabelCodec& codec) {
  const std::size_t k = codec.num_classes();
  if (probs.rank() != 2 || probs.dim(1) != k) {
    throw Error(ErrorKind::ShapeMismatch, "probabilities " + shape_string(probs.shape()) + " for " +
                                              std::to_string(k) + " classes");
  }
  if (probs.dim(0) != y_true.size()) {
    throw Error(ErrorKind::LengthMismatch, "probability rows vs labels differ");
  }
  const std::size_t n = y_true.size();
  std::vector<std::size_t> y_pred(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (probs.at(i, c) > probs.at(i, best)) best = c;
    }
    y_pred[i] = best;
  }

  EvaluationReport report;
  report.num_samples = n;
  report.confusion = confusion_matrix(y_true, y_pred, k);
  report.accuracy = report.confusion.accuracy();
  auto per_class = per_class_metrics(report.confusion);
  report.warnings = per_class.warnings;

  std::vector<double> p, r, f, aucs;
  std::vector<std::size_t> supports, auc_supports;
  for (std::size_t c = 0; c < k; ++c) {
    ClassReport cr;
    cr.name = codec.decode(c);
    cr.metrics = per_class.classes[c];
    std::vector<int> binary(n);
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) {
      binary[i] = y_true[i] == c ? 1 : 0;
      scores[i] = probs.at(i, c);
    }
    try {
      auto roc = roc_auc(binary, scores);
      cr.auc = roc.auc;
      cr.roc = std::move(roc.points);
      cr.pr = pr_curve(binary, scores);
      cr.average_precision = average_precision(cr.pr);
      aucs.push_back(roc.auc);
      auc_supports.push_back(cr.metrics.support);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::SingleClass) throw;
      report.warnings.push_back("class " + std::to_string(c) + ": AUC undefined, only one label value present");
    }
    p.push_back(cr.metrics.precision);
    r.push_back(cr.metrics.recall);
    f.push_back(cr.metrics.f1);
    supports.push_back(cr.metrics.support);
    report.per_class.push_back(std::move(cr));
  }
  report.macro = {macro_average(p), macro_average(r), macro_average(f), std::nullopt};
  report.weighted = {weighted_average(p, supports), weighted_average(r, supports), weighted_average(f, supports),
                     std::nullopt};
  if (!aucs.empty()) {
    report.macro.auc = macro_average(aucs);
    report.weighted.auc = weighted_average(aucs, auc_supports);
    if (aucs.size() < k) report.warnings.push_back("macro AUC averages only the classes where it is defined");
  }
  return report;
}

EvaluationReport evaluate(const Classifier& model, const BatchSource& stream, const LabelCodec& codec) {
  std::vector<Tensor> rows;
  std::vector<std::size_t> y_true;
  for (std::size_t b = 0; b < stream.num_batches(); ++b) {
    const Batch batch = stream.batch(0, b);
    const Tensor probs = model.predict_proba(batch.images);
    for (std::size_t i = 0; i < probs.dim(0); ++i) {
      rows.push_back(probs.row(i).reshaped({probs.dim(1)}));
      std::size_t label = 0;
      for (std::size_t c = 1; c < batch.labels.dim(1); ++c) {
        if (batch.labels.at(i, c) > batch.labels.at(i, label)) label = c;
      }
      y_true.push_back(label);
    }
  }
  if (rows.empty()) throw Error(ErrorKind::StreamExhausted, "evaluation stream is empty");
  return build_report(Tensor::stack(rows), y_true, codec);
}

namespace {

Json opt(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::optional<double> opt_from(const Json& j) {
  return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}

Json curve_json(const std::vector<CurvePoint>& points) {
  Json arr = Json::array();
  for (const auto& p : points) arr.push_back(Json::array({p.x, p.y, opt(p.threshold)}));
  return arr;
}

std::vector<CurvePoint> curve_from(const Json& j) {
  std::vector<CurvePoint> out;
  for (const auto& p : j) out.push_back({p.at(0).get<double>(), p.at(1).get<double>(), opt_from(p.at(2))});
  return out;
}

Json average_json(const AverageMetrics& m) {
  return Json{{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"auc", opt(m.auc)}};
}

AverageMetrics average_from(const Json& j) {
  return {j.at("precision").get<double>(), j.at("recall").get<double>(), j.at("f1").get<double>(),
          opt_from(j.at("auc"))};
}

}  // namespace

Json to_json(const EvaluationReport& report) {
  Json classes = Json::array();
  Json per_class = Json::array();
  for (const auto& c : report.per_class) {
    classes.push_back(c.name);
    per_class.push_back(Json{{"class", c.name},
                             {"precision", c.metrics.precision},
                             {"recall", c.metrics.recall},
                             {"f1", c.metrics.f1},
                             {"auc", opt(c.auc)},
                             {"average_precision", opt(c.average_precision)},
                             {"support", c.metrics.support},
                             {"roc", curve_json(c.roc)},
                             {"pr", curve_json(c.pr)}});
  }
  Json counts = Json::array();
  const auto& cm = report.confusion;
  for (std::size_t t = 0; t < cm.num_classes(); ++t) {
    Json row = Json::array();
    for (std::size_t p = 0; p < cm.num_classes(); ++p) row.push_back(cm.at(t, p));
    counts.push_back(row);
  }
  return Json{{"classes", classes},
              {"num_samples", report.num_samples},
              {"accuracy", report.accuracy},
              {"macro", average_json(report.macro)},
              {"weighted", average_json(report.weighted)},
              {"per_class", per_class},
              {"confusion", counts},
              {"warnings", report.warnings}};
}

EvaluationReport report_from_json(const Json& j) {
  EvaluationReport r;
  try {
    r.num_samples = j.at("num_samples").get<std::size_t>();
    r.accuracy = j.at("accuracy").get<double>();
    r.macro = average_from(j.at("macro"));
    r.weighted = average_from(j.at("weighted"));
    for (const auto& c : j.at("per_class")) {
      ClassReport cr;
      cr.name = c.at("class").get<std::string>();
      cr.metrics = {c.at("precision").get<double>(), c.at("recall").get<double>(), c.at("f1").get<double>(),
                    c.at("support").get<std::size_t>()};
      cr.auc = opt_from(c.at("auc"));
      cr.average_precision = opt_from(c.at("average_precision"));
      cr.roc = curve_from(c.at("roc"));
      cr.pr = curve_from(c.at("pr"));
      r.per_class.push_back(std::move(cr));
    }
    const auto& counts = j.at("confusion");
    r.confusion = ConfusionMatrix(counts.size());
    for (std::size_t t = 0; t < counts.size(); ++t) {
      for (std::size_t p = 0; p < counts.size(); ++p) r.confusion.at(t, p) = counts.at(t).at(p).get<std::size_t>();
    }
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("malformed report: ") + e.what());
  }
  return r;
}

double round_half_up(double value, int digits) {
  const double scale = std::pow(10.0, digits);
  const double scaled = std::fabs(value) * scale;
  // Nudge values that sit within representation error of a half.
  const double rounded = std::floor(scaled + 0.5 + 1e-9 * std::max(1.0, scaled)) / scale;
  return std::copysign(rounded, value);
}

std::string format_fixed(double value, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, round_half_up(value, digits));
  return buf;
}

std::string report_csv(const EvaluationReport& report) {
  std::string out = "class,precision,recall,f1,auc,support\n";
  auto auc_text = [](const std::optional<double>& v) { return v ? format_fixed(*v, 2) : std::string(); };
  for (const auto& c : report.per_class) {
    out += c.name + "," + format_fixed(c.metrics.precision, 2) + "," + format_fixed(c.metrics.recall, 2) + "," +
           format_fixed(c.metrics.f1, 2) + "," + auc_text(c.auc) + "," + std::to_string(c.metrics.support) + "\n";
  }
  const auto row = [&](const char* name, const AverageMetrics& m) {
    out += std::string(name) + "," + format_fixed(m.precision, 2) + "," + format_fixed(m.recall, 2) + "," +
           format_fixed(m.f1, 2) + "," + auc_text(m.auc) + "," + std::to_string(report.num_samples) + "\n";
  };
  row("macro", report.macro);
  row("weighted", report.weighted);
  return out;
}

std::string curve_csv(const std::vector<CurvePoint>& points, const char* x_name, const char* y_name) {
  std::string out = std::string(x_name) + "," + y_name + ",threshold\n";
  char buf[128];
  for (const auto& p : points) {
    if (p.threshold) {
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", p.x, p.y, *p.threshold);
    } else {
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g,\n", p.x, p.y);
    }
    out += buf;
  }
  return out;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
}

}  // namespace

void write_report_files(const EvaluationReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_json(to_json(report), dir / "report.json");
  write_text(dir / "report.csv", report_csv(report));
  for (const auto& c : report.per_class) {
    if (!c.roc.empty()) write_text(dir / ("roc_" + c.name + ".csv"), curve_csv(c.roc, "fpr", "tpr"));
    if (!c.pr.empty()) write_text(dir / ("pr_" + c.name + ".csv"), curve_csv(c.pr, "recall", "precision"));
  }
}

}  // namespace ckd
