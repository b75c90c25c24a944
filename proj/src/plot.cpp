#include "ckd/plot.hpp"

#include <algorithm>
#include <cstdio>
#include <string>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ckd/error.hpp"

namespace ckd {

namespace {

constexpr int kSize = 480;
constexpr int kMargin = 60;
const cv::Scalar kBlack(0, 0, 0);
const cv::Scalar kGrey(190, 190, 190);
const cv::Scalar kBlue(180, 90, 20);  // BGR

void save(const cv::Mat& canvas, const std::filesystem::path& path) {
  if (!cv::imwrite(path.string(), canvas)) throw Error(ErrorKind::Io, "cannot write " + path.string());
}

void text(cv::Mat& canvas, const std::string& s, cv::Point at, double scale = 0.45,
          const cv::Scalar& colour = kBlack) {
  cv::putText(canvas, s, at, cv::FONT_HERSHEY_SIMPLEX, scale, colour, 1, cv::LINE_AA);
}

cv::Point to_pixel(double x, double y) {
  const int span = kSize - 2 * kMargin;
  return {kMargin + static_cast<int>(std::lround(x * span)), kSize - kMargin - static_cast<int>(std::lround(y * span))};
}

cv::Mat axes(const std::string& title, const std::string& x_label, const std::string& y_label) {
  cv::Mat canvas(kSize, kSize, CV_8UC3, cv::Scalar(255, 255, 255));
  for (int i = 0; i <= 4; ++i) {
    const double t = i / 4.0;
    cv::line(canvas, to_pixel(t, 0), to_pixel(t, 1), kGrey, 1);
    cv::line(canvas, to_pixel(0, t), to_pixel(1, t), kGrey, 1);
    char label[16];
    std::snprintf(label, sizeof(label), "%.2f", t);
    text(canvas, label, to_pixel(t, 0) + cv::Point(-14, 18), 0.35);
    text(canvas, label, to_pixel(0, t) + cv::Point(-42, 4), 0.35);
  }
  cv::rectangle(canvas, to_pixel(0, 1), to_pixel(1, 0), kBlack, 1);
  text(canvas, title, {kMargin, 30}, 0.55);
  text(canvas, x_label, {kSize / 2 - 30, kSize - 15});
  text(canvas, y_label, {5, kMargin - 10});
  return canvas;
}

void polyline(cv::Mat& canvas, const std::vector<CurvePoint>& points) {
  for (std::size_t i = 1; i < points.size(); ++i) {
    cv::line(canvas, to_pixel(points[i - 1].x, points[i - 1].y), to_pixel(points[i].x, points[i].y), kBlue, 2,
             cv::LINE_AA);
  }
  if (points.size() == 1) cv::circle(canvas, to_pixel(points[0].x, points[0].y), 3, kBlue, -1);
}

cv::Mat confusion_heatmap(const EvaluationReport& report) {
  const auto& cm = report.confusion;
  const std::size_t k = cm.num_classes();
  cv::Mat canvas(kSize, kSize, CV_8UC3, cv::Scalar(255, 255, 255));
  text(canvas, "Confusion matrix (rows: true, cols: predicted)", {10, 25}, 0.5);
  if (k == 0) return canvas;
  std::size_t peak = 1;
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t p = 0; p < k; ++p) peak = std::max(peak, cm.at(t, p));
  }
  const int cell = (kSize - 2 * kMargin) / static_cast<int>(k);
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t p = 0; p < k; ++p) {
      const double v = static_cast<double>(cm.at(t, p)) / static_cast<double>(peak);
      const int shade = 255 - static_cast<int>(std::lround(v * 200.0));
      const cv::Point tl(kMargin + static_cast<int>(p) * cell, kMargin + static_cast<int>(t) * cell);
      cv::rectangle(canvas, tl, tl + cv::Point(cell, cell), cv::Scalar(255, shade, shade), -1);
      cv::rectangle(canvas, tl, tl + cv::Point(cell, cell), kBlack, 1);
      text(canvas, std::to_string(cm.at(t, p)), tl + cv::Point(cell / 2 - 10, cell / 2 + 5), 0.5,
           v > 0.6 ? cv::Scalar(255, 255, 255) : kBlack);
    }
    const std::string name = t < report.per_class.size() ? report.per_class[t].name : std::to_string(t);
    text(canvas, name.substr(0, 7), {2, kMargin + static_cast<int>(t) * cell + cell / 2}, 0.4);
    text(canvas, name.substr(0, 7), {kMargin + static_cast<int>(t) * cell + 4, kSize - kMargin + 18}, 0.4);
  }
  return canvas;
}

}  // namespace

std::vector<std::filesystem::path> render_plots(const EvaluationReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  const auto confusion_path = dir / "confusion.png";
  save(confusion_heatmap(report), confusion_path);
  written.push_back(confusion_path);
  for (const auto& c : report.per_class) {
    if (!c.roc.empty()) {
      char title[96];
      std::snprintf(title, sizeof(title), "ROC %s (AUC %.4f)", c.name.c_str(), c.auc.value_or(0.0));
      cv::Mat canvas = axes(title, "false positive rate", "true positive rate");
      cv::line(canvas, to_pixel(0, 0), to_pixel(1, 1), kGrey, 1, cv::LINE_AA);
      polyline(canvas, c.roc);
      const auto path = dir / ("roc_" + c.name + ".png");
      save(canvas, path);
      written.push_back(path);
    }
    if (!c.pr.empty()) {
      char title[96];
      std::snprintf(title, sizeof(title), "Precision-recall %s (AP %.4f)", c.name.c_str(),
                    c.average_precision.value_or(0.0));
      cv::Mat canvas = axes(title, "recall", "precision");
      polyline(canvas, c.pr);
      const auto path = dir / ("pr_" + c.name + ".png");
      save(canvas, path);
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace ckd
