#include "ckd/model_zoo.hpp"

#include <algorithm>

#include "ckd/checkpoint.hpp"
#include "ckd/error.hpp"

namespace ckd {

std::string_view to_string(BackboneFamily family) {
  switch (family) {
    case BackboneFamily::EfficientNetV2: return "efficientnet_v2";
    case BackboneFamily::InceptionV2: return "inception_v2";
    case BackboneFamily::MobileNetV2: return "mobilenet_v2";
    case BackboneFamily::ViTB16: return "vit_b16";
  }
  return "unknown";
}

std::string_view to_string(Variant variant) {
  return variant == Variant::FullPretrained ? "full_pretrained" : "tiny_random";
}

BackboneFamily parse_family(std::string_view text) {
  for (auto f : all_families()) {
    if (to_string(f) == text) return f;
  }
  throw Error(ErrorKind::InvalidConfig, "unknown backbone family '" + std::string(text) + "'");
}

Variant parse_variant(std::string_view text) {
  if (text == "full_pretrained") return Variant::FullPretrained;
  if (text == "tiny_random") return Variant::TinyRandom;
  throw Error(ErrorKind::InvalidConfig, "unknown variant '" + std::string(text) + "'");
}

const std::array<BackboneFamily, 4>& all_families() {
  static constexpr std::array<BackboneFamily, 4> kFamilies{
      BackboneFamily::EfficientNetV2, BackboneFamily::InceptionV2, BackboneFamily::MobileNetV2,
      BackboneFamily::ViTB16};
  return kFamilies;
}

Preprocessing preprocessing_preset(std::string_view id) {
  if (id == "unit") return {"unit", {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}};
  if (id == "symmetric") return {"symmetric", {0.5, 0.5, 0.5}, {0.5, 0.5, 0.5}};
  if (id == "imagenet") return {"imagenet", {0.485, 0.456, 0.406}, {0.229, 0.224, 0.225}};
  throw Error(ErrorKind::InvalidConfig, "unknown preprocessing id '" + std::string(id) + "'");
}

std::size_t reference_feature_dim(BackboneFamily family, Variant variant) {
  if (variant == Variant::TinyRandom) return 64;
  switch (family) {
    case BackboneFamily::EfficientNetV2: return 1280;  // EfficientNetV2-B0 top conv
    case BackboneFamily::InceptionV2: return 2048;     // InceptionV3 final mixed block
    case BackboneFamily::MobileNetV2: return 1280;     // MobileNetV2 1.0 top conv
    case BackboneFamily::ViTB16: return 768;           // ViT-B hidden width
  }
  return 0;
}

std::string_view default_preprocessing_id(BackboneFamily family) {
  switch (family) {
    case BackboneFamily::EfficientNetV2: return "imagenet";
    case BackboneFamily::InceptionV2: return "symmetric";
    case BackboneFamily::MobileNetV2: return "symmetric";
    case BackboneFamily::ViTB16: return "symmetric";
  }
  return "unit";
}

BackboneSpec make_backbone_spec(BackboneFamily family, Variant variant, ImageSize input_size) {
  BackboneSpec spec;
  spec.family = family;
  spec.variant = variant;
  spec.input_size = input_size;
  spec.feature_dim = reference_feature_dim(family, variant);
  spec.preprocessing = preprocessing_preset(default_preprocessing_id(family));
  return spec;
}

VitGeometry vit_geometry(ImageSize input_size) {
  VitGeometry g;
  if (input_size.height == 0 || input_size.width == 0 || input_size.height % g.patch != 0 ||
      input_size.width % g.patch != 0) {
    throw Error(ErrorKind::UnsupportedInputSize,
                "vit_b16 needs input sides divisible by 16, got " +
                    std::to_string(input_size.height) + "x" + std::to_string(input_size.width));
  }
  g.grid_h = input_size.height / g.patch;
  g.grid_w = input_size.width / g.patch;
  g.num_patches = g.grid_h * g.grid_w;
  g.num_tokens = g.num_patches + 1;
  return g;
}

void check_image_batch(const Tensor& batch, ImageSize expected) {
  if (batch.rank() != 4 || batch.dim(1) != expected.height || batch.dim(2) != expected.width ||
      batch.dim(3) != 3) {
    throw Error(ErrorKind::ShapeMismatch,
                "expected (N," + std::to_string(expected.height) + "," +
                    std::to_string(expected.width) + ",3) batch, got " + shape_string(batch.shape()));
  }
}

nn::Var FeatureExtractor::forward(const Tensor& raw_batch) const {
  check_image_batch(raw_batch, spec_.input_size);
  Tensor normalized = raw_batch;
  const auto& pre = spec_.preprocessing;
  double* p = normalized.ptr();
  for (std::size_t i = 0; i < normalized.size(); ++i) {
    const std::size_t c = i % 3;
    p[i] = (p[i] - pre.mean[c]) / pre.stddev[c];
  }
  nn::Var out = body(nn::constant(std::move(normalized)));
  if (out->value.rank() != 2 || out->value.dim(1) != spec_.feature_dim) {
    throw Error(ErrorKind::DimMismatch, std::string(to_string(spec_.family)) +
                                            " produced features " +
                                            shape_string(out->value.shape()) +
                                            ", spec feature_dim " + std::to_string(spec_.feature_dim));
  }
  return out;
}

Tensor FeatureExtractor::features(const Tensor& raw_batch) const {
  nn::NoGradGuard guard;
  return forward(raw_batch)->value;
}

std::unique_ptr<FeatureExtractor> build_backbone(const BackboneSpec& spec,
                                                 const BuildOptions& options) {
  const std::size_t expected = reference_feature_dim(spec.family, spec.variant);
  if (spec.feature_dim != expected) {
    throw Error(ErrorKind::DimMismatch, std::string(to_string(spec.family)) + " " +
                                            std::string(to_string(spec.variant)) +
                                            " has feature_dim " + std::to_string(expected) +
                                            ", spec says " + std::to_string(spec.feature_dim));
  }
  if (spec.family == BackboneFamily::ViTB16) vit_geometry(spec.input_size);
  if (spec.variant == Variant::TinyRandom) return construct_architecture(spec, options.seed);

  WeightStore store(options.weights_dir);
  auto tensors = store.load(spec.family, spec.variant);
  auto extractor = construct_architecture(spec, options.seed);
  load_tensors({{"", &extractor->parameters()}}, tensors);
  return extractor;
}

std::string_view to_string(FreezePolicy policy) {
  switch (policy) {
    case FreezePolicy::HeadOnly: return "head_only";
    case FreezePolicy::HeadAndLastStage: return "head_and_last_stage";
    case FreezePolicy::All: return "all";
  }
  return "head_and_last_stage";
}

FreezePolicy parse_freeze_policy(std::string_view text) {
  if (text == "head_only") return FreezePolicy::HeadOnly;
  if (text == "head_and_last_stage") return FreezePolicy::HeadAndLastStage;
  if (text == "all") return FreezePolicy::All;
  throw Error(ErrorKind::InvalidConfig, "unknown freeze policy '" + std::string(text) + "'");
}

std::vector<nn::Parameter*> Classifier::trainable_parameters() {
  std::vector<nn::Parameter*> out;
  for (auto& ref : stores()) {
    for (auto& p : ref.store->all()) {
      if (p.trainable) out.push_back(&p);
    }
  }
  return out;
}

std::vector<Tensor> Classifier::snapshot() const {
  std::vector<Tensor> out;
  for (auto& ref : const_cast<Classifier*>(this)->stores()) {
    auto part = ref.store->snapshot();
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

void Classifier::restore(const std::vector<Tensor>& values) {
  std::size_t offset = 0;
  for (auto& ref : stores()) {
    const std::size_t count = ref.store->all().size();
    if (offset + count > values.size()) throw Error(ErrorKind::ShapeMismatch, "snapshot too short");
    ref.store->restore(std::vector<Tensor>(values.begin() + static_cast<std::ptrdiff_t>(offset),
                                           values.begin() + static_cast<std::ptrdiff_t>(offset + count)));
    offset += count;
  }
  if (offset != values.size()) throw Error(ErrorKind::ShapeMismatch, "snapshot too long");
}

std::string Classifier::checksum() const {
  std::string joined;
  for (auto& ref : const_cast<Classifier*>(this)->stores()) joined += ref.prefix + ref.store->checksum();
  return joined.empty() ? std::string() : sha256_hex(joined);
}

Tensor Classifier::predict_proba(const Tensor& batch) const {
  nn::NoGradGuard guard;
  return nn::softmax_rows(logits(batch, false, nullptr)->value);
}

ClassifierModel::ClassifierModel(std::unique_ptr<FeatureExtractor> extractor,
                                 std::size_t num_classes, std::uint64_t seed, FreezePolicy policy)
    : extractor_(std::move(extractor)), num_classes_(num_classes), policy_(policy) {
  if (num_classes_ < 2) throw Error(ErrorKind::InvalidConfig, "a classifier needs >= 2 classes");
  Rng rng(derive_seed({seed, 0x4ead}));
  head_layer_ = nn::Dense(head_, "head/dense", "head", extractor_->spec().feature_dim, num_classes_,
                          nn::Dense::Init::Glorot, rng);
  apply_freeze_policy(policy);
}

void ClassifierModel::apply_freeze_policy(FreezePolicy policy) {
  policy_ = policy;
  auto& store = extractor_->parameters();
  store.set_trainable(policy == FreezePolicy::All);
  if (policy == FreezePolicy::HeadAndLastStage) {
    for (const auto& g : extractor_->last_stage_groups()) store.set_group_trainable(g, true);
  }
  head_.set_trainable(true);
}

nn::Var ClassifierModel::logits(const Tensor& batch, bool /*training*/, Rng* /*rng*/) const {
  return head_layer_(extractor_->forward(batch));
}

std::vector<StoreRef> ClassifierModel::stores() {
  return {{"backbone/", &extractor_->parameters()}, {"", &head_}};
}

std::unique_ptr<ClassifierModel> attach_head(std::unique_ptr<FeatureExtractor> extractor,
                                             std::size_t num_classes, std::uint64_t seed,
                                             FreezePolicy policy) {
  return std::make_unique<ClassifierModel>(std::move(extractor), num_classes, seed, policy);
}

Tensor predict_proba(const Classifier& model, const Tensor& batch) {
  return model.predict_proba(batch);
}

}  // namespace ckd
