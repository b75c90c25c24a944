#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <mutex>
#include <vector>

#include "ckd/augmentation.hpp"
#include "ckd/dataset.hpp"
#include "ckd/tensor.hpp"

namespace ckd {

struct Batch {
  Tensor images;                     // (B, H, W, 3), intensities in [0, 1]
  Tensor labels;                     // (B, K) one-hot
  std::vector<std::size_t> indices;  // source sample index per row
};

/// Epoch-addressable batch producer. batch(epoch, i) is a pure function of
/// its arguments, so callers may prefetch in any order.
class BatchSource {
 public:
  virtual ~BatchSource() = default;
  virtual std::size_t num_samples() const = 0;
  virtual std::size_t batch_size() const = 0;
  virtual Batch batch(std::size_t epoch, std::size_t index) const = 0;

  std::size_t num_batches() const {
    return (num_samples() + batch_size() - 1) / batch_size();
  }
};

enum class StreamMode {
  Train,     // load, rescale, augment
  Evaluate,  // load, rescale only
};

std::vector<std::size_t> epoch_order(std::size_t count, bool shuffle, std::uint64_t seed,
                                     std::size_t epoch);

class ManifestStream final : public BatchSource {
 public:
  ManifestStream(Manifest manifest, LabelCodec codec, AugmentationConfig cfg,
                 std::size_t batch_size, StreamMode mode, bool shuffle, std::uint64_t seed,
                 bool cache_images = true);

  std::size_t num_samples() const override { return manifest_.size(); }
  std::size_t batch_size() const override { return batch_size_; }
  Batch batch(std::size_t epoch, std::size_t index) const override;

  // The ordinal-th sample of an epoch, after any augmentation.
  Tensor sample(std::size_t epoch, std::size_t ordinal) const;
  std::vector<std::size_t> order(std::size_t epoch) const;

  const Manifest& manifest() const { return manifest_; }

 private:
  Tensor base_image(std::size_t record) const;

  Manifest manifest_;
  LabelCodec codec_;
  AugmentationConfig cfg_;
  std::size_t batch_size_;
  StreamMode mode_;
  bool shuffle_;
  std::uint64_t seed_;
  bool cache_images_;
  mutable std::mutex cache_mutex_;
  mutable std::map<std::size_t, Tensor> cache_;
};

/// In-memory source over pre-built image and label tensors.
class TensorStream final : public BatchSource {
 public:
  TensorStream(Tensor images, Tensor labels, std::size_t batch_size, bool shuffle = false,
               std::uint64_t seed = 0);

  std::size_t num_samples() const override { return images_.dim(0); }
  std::size_t batch_size() const override { return batch_size_; }
  Batch batch(std::size_t epoch, std::size_t index) const override;

 private:
  Tensor images_, labels_;
  std::size_t batch_size_;
  bool shuffle_;
  std::uint64_t seed_;
};

}  // namespace ckd
