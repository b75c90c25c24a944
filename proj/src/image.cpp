#include "ckd/image.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/imgcodecs.hpp>

#include "ckd/error.hpp"

namespace ckd {
namespace {

cv::Mat to_bgr8(const Tensor& image, double scale) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw Error(ErrorKind::ShapeMismatch, "expected (H,W,3) image, got " + shape_string(image.shape()));
  }
  const int h = static_cast<int>(image.dim(0)), w = static_cast<int>(image.dim(1));
  cv::Mat mat(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y) {
    auto* row = mat.ptr<cv::Vec3b>(y);
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = image.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x),
                                  static_cast<std::size_t>(c)) * scale;
        row[x][2 - c] = static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return mat;
}

void write(const cv::Mat& mat, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mat)) throw Error(ErrorKind::Io, "cannot write " + path.string());
}

}  // namespace

Tensor decode_image(const std::filesystem::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (mat.empty()) throw Error(ErrorKind::DecodeError, "cannot decode image " + path.string());
  double scale = 1.0;
  if (mat.depth() == CV_16U) {
    scale = 255.0 / 65535.0;
  } else if (mat.depth() != CV_8U) {
    throw Error(ErrorKind::DecodeError, "unsupported pixel depth in " + path.string());
  }
  const int channels = mat.channels();
  if (channels != 1 && channels != 3 && channels != 4) {
    throw Error(ErrorKind::DecodeError, "unsupported channel count in " + path.string());
  }
  const auto h = static_cast<std::size_t>(mat.rows), w = static_cast<std::size_t>(mat.cols);
  Tensor out({h, w, 3});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        // OpenCV stores BGR(A); map to RGB.
        const int src_c = channels == 1 ? 0 : static_cast<int>(2 - c);
        double v = 0.0;
        if (mat.depth() == CV_8U) {
          v = mat.ptr<unsigned char>(static_cast<int>(y))[x * static_cast<std::size_t>(channels) +
                                                          static_cast<std::size_t>(src_c)];
        } else {
          v = mat.ptr<unsigned short>(static_cast<int>(y))[x * static_cast<std::size_t>(channels) +
                                                           static_cast<std::size_t>(src_c)];
        }
        out.at(y, x, c) = v * scale;
      }
    }
  }
  return out;
}

Tensor resize_bilinear(const Tensor& image, ImageSize size) {
  if (image.rank() != 3) {
    throw Error(ErrorKind::ShapeMismatch, "resize expects (H,W,C), got " + shape_string(image.shape()));
  }
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (h == size.height && w == size.width) return image;
  Tensor out({size.height, size.width, c});
  const double sy = static_cast<double>(h) / static_cast<double>(size.height);
  const double sx = static_cast<double>(w) / static_cast<double>(size.width);
  for (std::size_t oy = 0; oy < size.height; ++oy) {
    const double fy = std::clamp((static_cast<double>(oy) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(h - 1));
    const auto y0 = static_cast<std::size_t>(std::floor(fy));
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < size.width; ++ox) {
      const double fx = std::clamp((static_cast<double>(ox) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(w - 1));
      const auto x0 = static_cast<std::size_t>(std::floor(fx));
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double top = image.at(y0, x0, ch) * (1.0 - wx) + image.at(y0, x1, ch) * wx;
        const double bottom = image.at(y1, x0, ch) * (1.0 - wx) + image.at(y1, x1, ch) * wx;
        out.at(oy, ox, ch) = top * (1.0 - wy) + bottom * wy;
      }
    }
  }
  return out;
}

Tensor load_and_resize(const std::filesystem::path& path, ImageSize size) {
  return resize_bilinear(decode_image(path), size);
}

void save_png(const Tensor& image, const std::filesystem::path& path) {
  write(to_bgr8(image, 255.0), path);
}

void save_png_raw(const Tensor& image, const std::filesystem::path& path) {
  write(to_bgr8(image, 1.0), path);
}

}  // namespace ckd
