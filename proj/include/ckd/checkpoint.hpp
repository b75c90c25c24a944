#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "ckd/dataset.hpp"
#include "ckd/hashing.hpp"
#include "ckd/model_zoo.hpp"
#include "ckd/serialization.hpp"

namespace ckd {

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Binary container: "CKDCKPT1\n", u64 little-endian header length, a JSON
/// header {"meta": ..., "tensors": [{name, shape, offset}]}, then raw
/// little-endian doubles.
struct CheckpointData {
  Json meta;
  std::vector<NamedTensor> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const Json& meta,
                      const std::vector<NamedTensor>& tensors);
// MissingCheckpoint if absent; Io on a malformed file.
CheckpointData read_checkpoint(const std::filesystem::path& path);

// Parameters of every store, names prefixed by the store's prefix.
std::vector<NamedTensor> collect_tensors(const std::vector<StoreRef>& stores);
// Exact name set and shapes required; ShapeMismatch otherwise.
void load_tensors(const std::vector<StoreRef>& stores, const std::vector<NamedTensor>& tensors);

/// Local pretrained-weight directory: <root>/<family>/<variant>.ckpt plus a
/// MANIFEST.json mapping "<family>/<variant>" to the file's SHA-256.
class WeightStore {
 public:
  explicit WeightStore(std::filesystem::path root) : root_(std::move(root)) {}

  std::filesystem::path file_for(BackboneFamily family, Variant variant) const;
  // WeightsUnavailable when the file or its manifest entry is missing or the
  // hash disagrees.
  std::vector<NamedTensor> load(BackboneFamily family, Variant variant) const;
  void publish(BackboneFamily family, Variant variant, const std::vector<NamedTensor>& tensors) const;

 private:
  std::filesystem::path root_;
};

// Self-describing classifier checkpoint: spec, codec, freeze policy, weights.
void save_classifier(const ClassifierModel& model, const LabelCodec& codec,
                     const std::filesystem::path& path);

struct LoadedClassifier {
  std::unique_ptr<ClassifierModel> model;
  LabelCodec codec;
};

LoadedClassifier load_classifier(const std::filesystem::path& path);

}  // namespace ckd
