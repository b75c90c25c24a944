#include "ckd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ckd/error.hpp"

namespace ckd {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

std::string shape_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_size(shape_)) {
    throw Error(ErrorKind::ShapeMismatch, "value count " + std::to_string(data_.size()) +
                                              " does not fill shape " + shape_string(shape_));
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw Error(ErrorKind::ShapeMismatch,
                "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin > end || end > shape_[0]) {
    throw Error(ErrorKind::IndexOutOfRange, "row slice out of range for " + shape_string(shape_));
  }
  Shape shape = shape_;
  shape[0] = end - begin;
  const std::size_t stride = shape_[0] ? data_.size() / shape_[0] : 0;
  std::vector<double> values(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                             data_.begin() + static_cast<std::ptrdiff_t>(end * stride));
  return Tensor(std::move(shape), std::move(values));
}

Tensor Tensor::stack(std::span<const Tensor> items) {
  if (items.empty()) return Tensor(Shape{0});
  const Shape& inner = items.front().shape();
  Shape shape{items.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  std::vector<double> values;
  values.reserve(shape_size(shape));
  for (const auto& item : items) {
    if (item.shape() != inner) {
      throw Error(ErrorKind::ShapeMismatch, "cannot stack " + shape_string(item.shape()) +
                                                " with " + shape_string(inner));
    }
    values.insert(values.end(), item.storage().begin(), item.storage().end());
  }
  return Tensor(std::move(shape), std::move(values));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::ShapeMismatch,
                shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace ckd
