#include "ckd/batch_stream.hpp"

#include <numeric>

#include "ckd/error.hpp"
#include "ckd/image.hpp"
#include "ckd/rng.hpp"

namespace ckd {

std::vector<std::size_t> epoch_order(std::size_t count, bool shuffle, std::uint64_t seed,
                                     std::size_t epoch) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    Rng rng(derive_seed({seed, 0x0bde5u, epoch}));
    rng.shuffle(std::span<std::size_t>(order));
  }
  return order;
}

ManifestStream::ManifestStream(Manifest manifest, LabelCodec codec, AugmentationConfig cfg,
                               std::size_t batch_size, StreamMode mode, bool shuffle,
                               std::uint64_t seed, bool cache_images)
    : manifest_(std::move(manifest)),
      codec_(std::move(codec)),
      cfg_(cfg),
      batch_size_(batch_size),
      mode_(mode),
      shuffle_(shuffle),
      seed_(seed),
      cache_images_(cache_images) {
  if (manifest_.records.empty()) throw Error(ErrorKind::InvalidConfig, "stream over an empty manifest");
  if (batch_size_ == 0) throw Error(ErrorKind::InvalidConfig, "batch_size must be >= 1");
  cfg_.validate();
}

std::vector<std::size_t> ManifestStream::order(std::size_t epoch) const {
  return epoch_order(manifest_.size(), shuffle_, seed_, epoch);
}

Tensor ManifestStream::base_image(std::size_t record) const {
  if (cache_images_) {
    std::lock_guard lock(cache_mutex_);
    if (auto it = cache_.find(record); it != cache_.end()) return it->second;
  }
  Tensor img = load_and_resize(manifest_.records[record].path, cfg_.target_size);
  for (auto& v : img.values()) v *= cfg_.rescale;
  if (cache_images_) {
    std::lock_guard lock(cache_mutex_);
    cache_.emplace(record, img);
  }
  return img;
}

Tensor ManifestStream::sample(std::size_t epoch, std::size_t ordinal) const {
  const std::size_t record = order(epoch).at(ordinal);
  Tensor img = base_image(record);
  if (mode_ == StreamMode::Train) {
    img = augment(img, cfg_, derive_seed({seed_, epoch, ordinal}));
  }
  return img;
}

Batch ManifestStream::batch(std::size_t epoch, std::size_t index) const {
  const std::size_t begin = index * batch_size_;
  if (begin >= manifest_.size()) {
    throw Error(ErrorKind::StreamExhausted, "batch " + std::to_string(index) + " past end of epoch");
  }
  const std::size_t end = std::min(begin + batch_size_, manifest_.size());
  const auto ord = order(epoch);
  std::vector<Tensor> images;
  Tensor labels({end - begin, codec_.num_classes()});
  Batch out;
  for (std::size_t k = begin; k < end; ++k) {
    const std::size_t record = ord[k];
    Tensor img = base_image(record);
    if (mode_ == StreamMode::Train) img = augment(img, cfg_, derive_seed({seed_, epoch, k}));
    images.push_back(std::move(img));
    const auto& r = manifest_.records[record];
    labels.at(k - begin, codec_.index_of(r.class_name)) = 1.0;
    out.indices.push_back(record);
  }
  out.images = Tensor::stack(images);
  out.labels = std::move(labels);
  return out;
}

TensorStream::TensorStream(Tensor images, Tensor labels, std::size_t batch_size, bool shuffle,
                           std::uint64_t seed)
    : images_(std::move(images)),
      labels_(std::move(labels)),
      batch_size_(batch_size),
      shuffle_(shuffle),
      seed_(seed) {
  if (images_.rank() != 4 || labels_.rank() != 2 || images_.dim(0) != labels_.dim(0)) {
    throw Error(ErrorKind::ShapeMismatch, "tensor stream images " + shape_string(images_.shape()) +
                                              " vs labels " + shape_string(labels_.shape()));
  }
  if (batch_size_ == 0) throw Error(ErrorKind::InvalidConfig, "batch_size must be >= 1");
}

Batch TensorStream::batch(std::size_t epoch, std::size_t index) const {
  const std::size_t n = images_.dim(0);
  const std::size_t begin = index * batch_size_;
  if (begin >= n) throw Error(ErrorKind::StreamExhausted, "batch past end of epoch");
  const std::size_t end = std::min(begin + batch_size_, n);
  const auto ord = epoch_order(n, shuffle_, seed_, epoch);
  std::vector<Tensor> images, labels;
  Batch out;
  for (std::size_t k = begin; k < end; ++k) {
    images.push_back(images_.row(ord[k]).reshaped(Shape(images_.shape().begin() + 1, images_.shape().end())));
    labels.push_back(labels_.row(ord[k]).reshaped({labels_.dim(1)}));
    out.indices.push_back(ord[k]);
  }
  out.images = Tensor::stack(images);
  out.labels = Tensor::stack(labels);
  return out;
}

}  // namespace ckd
