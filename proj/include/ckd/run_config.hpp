#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "ckd/augmentation.hpp"
#include "ckd/ensemble.hpp"
#include "ckd/lime.hpp"
#include "ckd/model_zoo.hpp"
#include "ckd/trainer.hpp"

namespace ckd {

struct RunConfig {
  std::filesystem::path dataset_root;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  std::filesystem::path weights_dir = "weights";
  double train_fraction = 0.8;
  FreezePolicy freeze_policy = FreezePolicy::HeadAndLastStage;
  AugmentationConfig augmentation;
  TrainingConfig training;
  std::vector<BackboneSpec> backbones;
  EnsembleSpec ensemble;
  LimeConfig lime;

  // Four families at the augmentation target size.
  static RunConfig defaults(Variant variant = Variant::TinyRandom);

  const BackboneSpec* backbone(BackboneFamily family) const;
  void validate() const;
};

Json to_json(const RunConfig& cfg);
// Missing keys take defaults; unknown keys are rejected.
RunConfig run_config_from_json(const Json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// Rewrites every backbone and ensemble branch to the given variant, keeping
// feature_dim consistent with the reference table.
void apply_variant(RunConfig& cfg, Variant variant);

// Keeps backbones, ensemble branches and augmentation on one input size.
void apply_input_size(RunConfig& cfg, ImageSize size);

}  // namespace ckd
