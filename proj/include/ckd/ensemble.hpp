#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "ckd/checkpoint.hpp"
#include "ckd/model_zoo.hpp"
#include "ckd/trainer.hpp"

namespace ckd {

struct EnsembleSpec {
  std::vector<BackboneSpec> branches;
  std::vector<std::size_t> dense_widths{512, 128};
  std::size_t num_classes = 4;
  bool branch_trainable = false;
  double dropout = 0.0;  // applied after each hidden layer while training

  std::size_t fused_dim() const;
  // >= 2 branches, one shared input size, sensible widths.
  void validate() const;
};

Json to_json(const EnsembleSpec& spec);
EnsembleSpec ensemble_spec_from_json(const Json& j);

/// Parallel backbone branches over one shared input; pooled features are
/// concatenated in branch order and classified by a tanh dense stack.
class EnsembleModel final : public Classifier {
 public:
  EnsembleModel(std::vector<std::unique_ptr<FeatureExtractor>> branches, EnsembleSpec spec,
                std::uint64_t seed);

  const EnsembleSpec& spec() const { return spec_; }
  std::size_t num_branches() const { return branches_.size(); }
  FeatureExtractor& branch(std::size_t i) { return *branches_.at(i); }
  const FeatureExtractor& branch(std::size_t i) const { return *branches_.at(i); }
  nn::ParameterStore& fusion_head() { return head_; }
  const nn::ParameterStore& fusion_head() const { return head_; }

  // Start column of each branch inside the fused vector.
  std::vector<std::size_t> branch_offsets() const;

  void set_branch_trainable(bool trainable);

  nn::Var fused(const Tensor& batch) const;
  Tensor fused_features(const Tensor& batch) const;

  std::size_t num_classes() const override { return spec_.num_classes; }
  ImageSize input_size() const override { return spec_.branches.front().input_size; }
  nn::Var logits(const Tensor& batch, bool training, Rng* rng) const override;
  std::vector<StoreRef> stores() override;

 private:
  std::vector<std::unique_ptr<FeatureExtractor>> branches_;
  EnsembleSpec spec_;
  nn::ParameterStore head_;
  std::vector<nn::Dense> hidden_;
  nn::Dense output_;
};

// DimMismatch when an extractor disagrees with its spec entry.
std::unique_ptr<EnsembleModel> build_ensemble(std::vector<std::unique_ptr<FeatureExtractor>> branches,
                                              const EnsembleSpec& spec, std::uint64_t seed);

Tensor ensemble_forward(const EnsembleModel& model, const Tensor& batch);

TrainingHistory train_ensemble(EnsembleModel& model, const BatchSource& train_stream,
                               const BatchSource& val_stream, const TrainingConfig& cfg,
                               const TrainCallbacks& callbacks = {});

struct BranchReference {
  std::string name;
  std::filesystem::path checkpoint;
  std::string sha256;
};

// Topology description for audit (ensemble.json).
Json ensemble_topology(const EnsembleModel& model, const std::vector<BranchReference>& refs);

void save_ensemble(const EnsembleModel& model, const LabelCodec& codec,
                   const std::vector<BranchReference>& refs, const std::filesystem::path& path);

struct LoadedEnsemble {
  std::unique_ptr<EnsembleModel> model;
  LabelCodec codec;
};

LoadedEnsemble load_ensemble(const std::filesystem::path& path);

}  // namespace ckd
