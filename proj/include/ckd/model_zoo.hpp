#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "ckd/autograd.hpp"
#include "ckd/image.hpp"
#include "ckd/layers.hpp"
#include "ckd/tensor.hpp"

namespace ckd {

enum class BackboneFamily { EfficientNetV2, InceptionV2, MobileNetV2, ViTB16 };
enum class Variant { FullPretrained, TinyRandom };

std::string_view to_string(BackboneFamily family);
std::string_view to_string(Variant variant);
BackboneFamily parse_family(std::string_view text);
Variant parse_variant(std::string_view text);
const std::array<BackboneFamily, 4>& all_families();

/// Per-channel input normalisation applied to [0, 1] intensities.
struct Preprocessing {
  std::string id;
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};

  friend bool operator==(const Preprocessing&, const Preprocessing&) = default;
};

// "unit" (identity), "symmetric" (to [-1, 1]) or "imagenet" (mean/std).
Preprocessing preprocessing_preset(std::string_view id);

struct BackboneSpec {
  BackboneFamily family = BackboneFamily::MobileNetV2;
  Variant variant = Variant::TinyRandom;
  ImageSize input_size{224, 224};
  std::size_t feature_dim = 0;
  Preprocessing preprocessing;

  friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

// Pooled feature width of the family's reference architecture (or 64 for
// every tiny variant). The inception family follows the InceptionV3 lineage.
std::size_t reference_feature_dim(BackboneFamily family, Variant variant);
std::string_view default_preprocessing_id(BackboneFamily family);
BackboneSpec make_backbone_spec(BackboneFamily family, Variant variant, ImageSize input_size);

struct VitGeometry {
  std::size_t patch = 16;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t num_patches = 0;
  std::size_t num_tokens = 0;  // patches + class token
};

// Throws UnsupportedInputSize unless both sides are multiples of 16.
VitGeometry vit_geometry(ImageSize input_size);

/// Backbone body mapping raw (N, H, W, 3) intensities in [0, 1] to pooled
/// (N, feature_dim) features. Applies its own preprocessing first.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(BackboneSpec spec) : spec_(std::move(spec)) {}
  virtual ~FeatureExtractor() = default;
  FeatureExtractor(const FeatureExtractor&) = delete;
  FeatureExtractor& operator=(const FeatureExtractor&) = delete;

  const BackboneSpec& spec() const noexcept { return spec_; }
  nn::ParameterStore& parameters() noexcept { return store_; }
  const nn::ParameterStore& parameters() const noexcept { return store_; }

  // Parameter groups forming the final stage, unfrozen by the default policy.
  const std::vector<std::string>& last_stage_groups() const noexcept { return last_stage_groups_; }

  nn::Var forward(const Tensor& raw_batch) const;
  Tensor features(const Tensor& raw_batch) const;

 protected:
  virtual nn::Var body(const nn::Var& normalized) const = 0;

  BackboneSpec spec_;
  nn::ParameterStore store_;
  std::vector<std::string> last_stage_groups_;
};

// Builds the family architecture at the spec's width with seeded random
// initialisation, independent of where weights would come from.
std::unique_ptr<FeatureExtractor> construct_architecture(const BackboneSpec& spec,
                                                         std::uint64_t seed);

struct BuildOptions {
  std::filesystem::path weights_dir = "weights";
  std::uint64_t seed = 0;
};

// tiny_random: seeded init. full_pretrained: weights from the store, verified
// against its MANIFEST.json; WeightsUnavailable otherwise.
std::unique_ptr<FeatureExtractor> build_backbone(const BackboneSpec& spec,
                                                 const BuildOptions& options = {});

enum class FreezePolicy {
  HeadOnly,          // backbone fully frozen
  HeadAndLastStage,  // default
  All,               // full fine-tune
};

std::string_view to_string(FreezePolicy policy);
FreezePolicy parse_freeze_policy(std::string_view text);

struct StoreRef {
  std::string prefix;
  nn::ParameterStore* store;
};

/// Anything the trainer can optimise: maps an image batch to class logits.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual std::size_t num_classes() const = 0;
  virtual ImageSize input_size() const = 0;
  // Records a graph when gradients are enabled. rng drives dropout only.
  virtual nn::Var logits(const Tensor& batch, bool training, Rng* rng) const = 0;
  virtual std::vector<StoreRef> stores() = 0;

  std::vector<nn::Parameter*> trainable_parameters();
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);
  std::string checksum() const;

  // Softmax probabilities, no graph, no augmentation, no dropout.
  Tensor predict_proba(const Tensor& batch) const;
};

class ClassifierModel final : public Classifier {
 public:
  ClassifierModel(std::unique_ptr<FeatureExtractor> extractor, std::size_t num_classes,
                  std::uint64_t seed, FreezePolicy policy = FreezePolicy::HeadAndLastStage);

  const BackboneSpec& spec() const { return extractor_->spec(); }
  FeatureExtractor& extractor() { return *extractor_; }
  const FeatureExtractor& extractor() const { return *extractor_; }
  // Leaves the model without a backbone; used to reuse a trained branch.
  std::unique_ptr<FeatureExtractor> release_extractor() { return std::move(extractor_); }
  nn::ParameterStore& head() { return head_; }
  const nn::ParameterStore& head() const { return head_; }
  FreezePolicy freeze_policy() const { return policy_; }

  void apply_freeze_policy(FreezePolicy policy);

  std::size_t num_classes() const override { return num_classes_; }
  ImageSize input_size() const override { return extractor_->spec().input_size; }
  nn::Var logits(const Tensor& batch, bool training, Rng* rng) const override;
  nn::Var head_logits(const nn::Var& features) const { return head_layer_(features); }
  std::vector<StoreRef> stores() override;

 private:
  std::unique_ptr<FeatureExtractor> extractor_;
  std::size_t num_classes_;
  nn::ParameterStore head_;
  nn::Dense head_layer_;
  FreezePolicy policy_;
};

std::unique_ptr<ClassifierModel> attach_head(std::unique_ptr<FeatureExtractor> extractor,
                                             std::size_t num_classes, std::uint64_t seed,
                                             FreezePolicy policy = FreezePolicy::HeadAndLastStage);

Tensor predict_proba(const Classifier& model, const Tensor& batch);

void check_image_batch(const Tensor& batch, ImageSize expected);

}  // namespace ckd
