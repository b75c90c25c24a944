#include <gtest/gtest.h>

#include "ckd/error.hpp"
#include "ckd/metrics.hpp"
#include "ckd/plot.hpp"
#include "ckd/rng.hpp"
#include "oracles.hpp"

using namespace ckd;

namespace {

ConfusionMatrix cm_of(const std::vector<std::size_t>& t, const std::vector<std::size_t>& p, std::size_t k) {
  return confusion_matrix(t, p, k);
}

Tensor probs_from(const std::vector<std::vector<double>>& rows) {
  Tensor t({rows.size(), rows.front().size()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c) t.at(i, c) = rows[i][c];
  }
  return t;
}

}  // namespace

TEST(Metrics, ConfusionExamples) {
  std::vector<std::size_t> y;
  for (std::size_t c = 0; c < 4; ++c) y.insert(y.end(), 3, c);
  const auto perfect = cm_of(y, y, 4);
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t b = 0; b < 4; ++b) EXPECT_EQ(perfect.at(a, b), a == b ? 3u : 0u);
  }
  const auto small = cm_of({0, 0, 1}, {0, 1, 1}, 2);
  EXPECT_EQ(small.at(0, 0), 1u);
  EXPECT_EQ(small.at(0, 1), 1u);
  EXPECT_EQ(small.at(1, 0), 0u);
  EXPECT_EQ(small.at(1, 1), 1u);
  try {
    cm_of({0, 1}, {0}, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::LengthMismatch);
  }
  try {
    cm_of({0, 2}, {0, 1}, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::IndexOutOfRange);
  }
}

TEST(Metrics, RandomConfusionMatchesNestedLoops) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::size_t> t(200), p(200);
    for (std::size_t i = 0; i < 200; ++i) {
      t[i] = rng.below(5);
      p[i] = rng.below(5);
    }
    const auto cm = cm_of(t, p, 5);
    const auto ref = oracle::confusion(t, p, 5);
    std::size_t trace = 0;
    for (std::size_t a = 0; a < 5; ++a) {
      std::size_t support = 0;
      for (std::size_t b = 0; b < 5; ++b) {
        ASSERT_EQ(cm.at(a, b), ref[a][b]);
        support += ref[a][b];
      }
      EXPECT_EQ(cm.row_sum(a), support);
      trace += ref[a][a];
    }
    EXPECT_EQ(cm.total(), 200u);
    EXPECT_DOUBLE_EQ(cm.accuracy(), static_cast<double>(trace) / 200.0);
  }
}

TEST(Metrics, F1ReportedRows) {
  EXPECT_EQ(format_fixed(f1_score(0.87, 0.98), 2), "0.92");
  EXPECT_EQ(format_fixed(f1_score(0.77, 0.54), 2), "0.63");
  EXPECT_EQ(f1_score(0.0, 0.0), 0.0);
}

TEST(Metrics, ZeroDenominatorWarns) {
  // Class 2 is never predicted; class 3 never occurs.
  const auto res = per_class_metrics(cm_of({0, 1, 2, 0}, {0, 1, 1, 3}, 4));
  EXPECT_EQ(res.classes[2].precision, 0.0);
  EXPECT_EQ(res.classes[2].recall, 0.0);
  EXPECT_EQ(res.classes[3].recall, 0.0);
  EXPECT_FALSE(res.warnings.empty());
  bool found = false;
  for (const auto& w : res.warnings) found |= w.find("class 2") != std::string::npos;
  EXPECT_TRUE(found);
}

TEST(Metrics, MacroAverages) {
  const std::vector<double> mobilenet{0.87, 0.96, 0.79, 0.87};
  EXPECT_NEAR(macro_average(mobilenet), 0.8725, 1e-12);
  const std::vector<double> ensemble{0.98, 1.0, 0.92, 0.94};
  EXPECT_NEAR(macro_average(ensemble), 0.96, 1e-12);
  const std::vector<double> one{0.42};
  EXPECT_EQ(macro_average(one), 0.42);
  EXPECT_THROW(macro_average(std::vector<double>{}), Error);
  const std::vector<std::size_t> w{1, 3};
  EXPECT_DOUBLE_EQ(weighted_average(std::vector<double>{0.2, 0.6}, w), 0.5);
}

TEST(Metrics, RocExamples) {
  const std::vector<int> labels{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(roc_auc(labels, std::vector<double>{0.1, 0.2, 0.8, 0.9}).auc, 1.0);
  const auto flat = roc_auc(labels, std::vector<double>{0.5, 0.5, 0.5, 0.5});
  EXPECT_DOUBLE_EQ(flat.auc, 0.5);
  ASSERT_EQ(flat.points.size(), 2u);
  EXPECT_FALSE(flat.points.front().threshold.has_value());
  EXPECT_EQ(flat.points.back().x, 1.0);
  EXPECT_EQ(flat.points.back().y, 1.0);
  try {
    roc_auc(std::vector<int>{1, 1}, std::vector<double>{0.1, 0.2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SingleClass);
  }
}

TEST(Metrics, RocMatchesPairwiseOracleAndAntisymmetry) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> labels(50);
    std::vector<double> scores(50), neg(50);
    for (std::size_t i = 0; i < 50; ++i) {
      labels[i] = static_cast<int>(rng.below(2));
      scores[i] = std::round(rng.uniform() * 10.0) / 10.0;  // plenty of ties
      neg[i] = -scores[i];
    }
    labels[0] = 0;
    labels[1] = 1;
    const double auc = roc_auc(labels, scores).auc;
    EXPECT_NEAR(auc, oracle::pairwise_auc(labels, scores), 1e-9);
    EXPECT_NEAR(auc + roc_auc(labels, neg).auc, 1.0, 1e-9);
  }
}

TEST(Metrics, PrExamples) {
  const std::vector<int> sep{1, 1, 0, 0, 0};
  for (const auto& pt : pr_curve(sep, std::vector<double>{0.9, 0.8, 0.3, 0.2, 0.1})) {
    if (pt.x < 1.0) EXPECT_EQ(pt.y, 1.0);
  }
  const auto sep_pts = pr_curve(sep, std::vector<double>{0.9, 0.8, 0.3, 0.2, 0.1});
  EXPECT_EQ(sep_pts[1].x, 1.0);
  EXPECT_EQ(sep_pts[1].y, 1.0);
  EXPECT_DOUBLE_EQ(average_precision(sep_pts), 1.0);

  std::vector<int> last(10, 0);
  last[9] = 1;
  std::vector<double> scores(10);
  for (std::size_t i = 0; i < 10; ++i) scores[i] = 1.0 - 0.05 * static_cast<double>(i);
  const auto pts = pr_curve(last, scores);
  EXPECT_DOUBLE_EQ(pts.back().x, 1.0);
  EXPECT_DOUBLE_EQ(pts.back().y, 0.1);
}

TEST(Metrics, PrMatchesThresholdRecount) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 5 + rng.below(60);
    std::vector<int> labels(n);
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(rng.below(2));
      scores[i] = std::round(rng.uniform() * 20.0) / 20.0;
    }
    labels[0] = 1;
    labels[1] = 0;
    const auto got = pr_curve(labels, scores);
    const auto ref = oracle::pr_points(labels, scores);
    ASSERT_EQ(got.size(), ref.size());
    double ap = 0, prev = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      ASSERT_EQ(got[i].x, ref[i].first);
      ASSERT_EQ(got[i].y, ref[i].second);
      ap += (ref[i].first - prev) * ref[i].second;
      prev = ref[i].first;
    }
    EXPECT_NEAR(average_precision(got), ap, 1e-12);
  }
}

TEST(Metrics, OracleModelReport) {
  std::vector<std::size_t> y{0, 1, 2, 3, 0, 1, 2, 3};
  std::vector<std::vector<double>> rows;
  for (std::size_t t : y) {
    std::vector<double> r(4, 0.0);
    r[t] = 1.0;
    rows.push_back(r);
  }
  const auto report = build_report(probs_from(rows), y, LabelCodec({"Cyst", "Normal", "Stone", "Tumor"}));
  EXPECT_EQ(report.accuracy, 1.0);
  for (const auto& c : report.per_class) {
    EXPECT_EQ(c.metrics.precision, 1.0);
    EXPECT_EQ(c.metrics.recall, 1.0);
    EXPECT_EQ(c.metrics.f1, 1.0);
    EXPECT_EQ(*c.auc, 1.0);
  }
  for (std::size_t a = 0; a < 4; ++a) EXPECT_EQ(report.confusion.at(a, a), 2u);
  EXPECT_EQ(report.macro.precision, 1.0);
}

TEST(Metrics, UniformModelReport) {
  std::vector<std::size_t> y;
  for (std::size_t i = 0; i < 40; ++i) y.push_back(i % 4);
  const auto report = build_report(Tensor({40, 4}, 0.25), y, LabelCodec({"a", "b", "c", "d"}));
  // Ties resolve to the first class, whose precision equals its prevalence.
  EXPECT_DOUBLE_EQ(report.per_class[0].metrics.precision, 0.25);
  for (const auto& c : report.per_class) EXPECT_DOUBLE_EQ(*c.auc, 0.5);
  EXPECT_FALSE(report.warnings.empty());
}

TEST(Metrics, LabelPermutationEquivariance) {
  Rng rng(21);
  std::vector<std::size_t> t(120), p(120);
  for (std::size_t i = 0; i < 120; ++i) {
    t[i] = rng.below(4);
    p[i] = rng.below(4);
  }
  const std::size_t perm[4] = {3, 0, 2, 1};
  std::vector<std::size_t> tp(120), pp(120);
  for (std::size_t i = 0; i < 120; ++i) {
    tp[i] = perm[t[i]];
    pp[i] = perm[p[i]];
  }
  const auto a = per_class_metrics(cm_of(t, p, 4)), b = per_class_metrics(cm_of(tp, pp, 4));
  std::vector<double> fa, fb;
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_DOUBLE_EQ(a.classes[c].f1, b.classes[perm[c]].f1);
    fa.push_back(a.classes[c].f1);
    fb.push_back(b.classes[c].f1);
  }
  EXPECT_NEAR(macro_average(fa), macro_average(fb), 1e-15);
}

TEST(Metrics, RoundHalfUp) {
  EXPECT_EQ(round_half_up(0.125, 2), 0.13);
  EXPECT_EQ(round_half_up(0.8725, 2), 0.87);
  EXPECT_EQ(round_half_up(0.875, 2), 0.88);
  EXPECT_EQ(round_half_up(-0.125, 2), -0.13);
  EXPECT_EQ(round_half_up(87.245, 2), 87.25);
  EXPECT_EQ(format_fixed(0.5, 2), "0.50");
}

TEST(Metrics, ReportFilesAndJsonRoundTrip) {
  oracle::TempDir tmp("report");
  Rng rng(4);
  std::vector<std::size_t> y;
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < 30; ++i) {
    y.push_back(i % 3);
    std::vector<double> r{rng.uniform(), rng.uniform(), rng.uniform()};
    const double s = r[0] + r[1] + r[2];
    for (auto& v : r) v /= s;
    rows.push_back(r);
  }
  const auto report = build_report(probs_from(rows), y, LabelCodec({"a", "b", "c"}));
  for (const auto& c : report.per_class) {
    EXPECT_NEAR(c.metrics.f1, f1_score(c.metrics.precision, c.metrics.recall), 1e-15);
  }
  const auto back = report_from_json(to_json(report));
  EXPECT_EQ(dump_json(to_json(back)), dump_json(to_json(report)));
  write_report_files(report, tmp.path());
  for (const char* f : {"report.json", "report.csv", "roc_a.csv", "pr_c.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(tmp / f)) << f;
  }
  const std::string csv = report_csv(report);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "class,precision,recall,f1,auc,support");
  EXPECT_NE(csv.find("\nmacro,"), std::string::npos);
  const auto plots = render_plots(back, tmp / "plots");
  EXPECT_EQ(plots.size(), 7u);
  for (const auto& p : plots) EXPECT_GT(std::filesystem::file_size(p), 0u);
}
