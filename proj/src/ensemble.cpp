#include "ckd/ensemble.hpp"

#include "ckd/error.hpp"

namespace ckd {

std::size_t EnsembleSpec::fused_dim() const {
  std::size_t total = 0;
  for (const auto& b : branches) total += b.feature_dim;
  return total;
}

void EnsembleSpec::validate() const {
  if (branches.size() < 2) throw Error(ErrorKind::InvalidConfig, "an ensemble needs >= 2 branches");
  for (const auto& b : branches) {
    if (!(b.input_size == branches.front().input_size)) {
      throw Error(ErrorKind::InvalidConfig, "ensemble branches must share one input size");
    }
  }
  if (num_classes < 2) throw Error(ErrorKind::InvalidConfig, "an ensemble needs >= 2 classes");
  for (auto w : dense_widths) {
    if (w == 0) throw Error(ErrorKind::InvalidConfig, "dense widths must be >= 1");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorKind::InvalidConfig, "dropout must be in [0, 1)");
}

Json to_json(const EnsembleSpec& spec) {
  Json branches = Json::array();
  for (const auto& b : spec.branches) branches.push_back(to_json(b));
  return Json{{"branches", branches},
              {"fused_dim", spec.fused_dim()},
              {"dense_widths", spec.dense_widths},
              {"num_classes", spec.num_classes},
              {"branch_trainable", spec.branch_trainable},
              {"dropout", spec.dropout}};
}

EnsembleSpec ensemble_spec_from_json(const Json& j) {
  require_known_keys(j, {"branches", "fused_dim", "dense_widths", "num_classes", "branch_trainable", "dropout"},
                     "ensemble");
  EnsembleSpec spec;
  try {
    if (j.contains("branches")) {
      for (const auto& b : j.at("branches")) spec.branches.push_back(backbone_spec_from_json(b));
    }
    spec.dense_widths = j.value("dense_widths", spec.dense_widths);
    spec.num_classes = j.value("num_classes", spec.num_classes);
    spec.branch_trainable = j.value("branch_trainable", spec.branch_trainable);
    spec.dropout = j.value("dropout", spec.dropout);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("ensemble: ") + e.what());
  }
  if (j.contains("fused_dim") && j.at("fused_dim").get<std::size_t>() != spec.fused_dim()) {
    throw Error(ErrorKind::DimMismatch, "ensemble fused_dim disagrees with its branches");
  }
  return spec;
}

EnsembleModel::EnsembleModel(std::vector<std::unique_ptr<FeatureExtractor>> branches,
                             EnsembleSpec spec, std::uint64_t seed)
    : branches_(std::move(branches)), spec_(std::move(spec)) {
  spec_.validate();
  Rng rng(derive_seed({seed, 0xf05e}));
  std::size_t in = spec_.fused_dim();
  for (std::size_t i = 0; i < spec_.dense_widths.size(); ++i) {
    hidden_.emplace_back(head_, "fusion/dense" + std::to_string(i + 1), "head", in, spec_.dense_widths[i],
                         nn::Dense::Init::Glorot, rng);
    in = spec_.dense_widths[i];
  }
  output_ = nn::Dense(head_, "fusion/output", "head", in, spec_.num_classes, nn::Dense::Init::Glorot, rng);
  set_branch_trainable(spec_.branch_trainable);
}

std::vector<std::size_t> EnsembleModel::branch_offsets() const {
  std::vector<std::size_t> offsets;
  std::size_t at = 0;
  for (const auto& b : spec_.branches) {
    offsets.push_back(at);
    at += b.feature_dim;
  }
  return offsets;
}

void EnsembleModel::set_branch_trainable(bool trainable) {
  spec_.branch_trainable = trainable;
  for (auto& b : branches_) b->parameters().set_trainable(trainable);
  head_.set_trainable(true);
}

nn::Var EnsembleModel::fused(const Tensor& batch) const {
  check_image_batch(batch, input_size());
  std::vector<nn::Var> parts;
  for (const auto& b : branches_) parts.push_back(b->forward(batch));
  nn::Var out = nn::concat_last(parts);
  if (out->value.dim(1) != spec_.fused_dim()) {
    throw Error(ErrorKind::DimMismatch, "fused width " + std::to_string(out->value.dim(1)) +
                                            " vs spec " + std::to_string(spec_.fused_dim()));
  }
  return out;
}

Tensor EnsembleModel::fused_features(const Tensor& batch) const {
  nn::NoGradGuard guard;
  return fused(batch)->value;
}

nn::Var EnsembleModel::logits(const Tensor& batch, bool training, Rng* rng) const {
  nn::Var h = fused(batch);
  for (const auto& layer : hidden_) {
    h = nn::tanh(layer(h));
    if (training && spec_.dropout > 0.0 && rng) h = nn::dropout(h, spec_.dropout, *rng);
  }
  return output_(h);
}

std::vector<StoreRef> EnsembleModel::stores() {
  std::vector<StoreRef> out;
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    out.push_back({"branch" + std::to_string(i) + "/", &branches_[i]->parameters()});
  }
  out.push_back({"", &head_});
  return out;
}

std::unique_ptr<EnsembleModel> build_ensemble(std::vector<std::unique_ptr<FeatureExtractor>> branches,
                                              const EnsembleSpec& spec, std::uint64_t seed) {
  if (branches.size() != spec.branches.size()) {
    throw Error(ErrorKind::DimMismatch, std::to_string(branches.size()) + " extractors for " +
                                            std::to_string(spec.branches.size()) + " branch specs");
  }
  for (std::size_t i = 0; i < branches.size(); ++i) {
    const auto& have = branches[i]->spec();
    const auto& want = spec.branches[i];
    if (have.family != want.family || have.feature_dim != want.feature_dim ||
        !(have.input_size == want.input_size)) {
      throw Error(ErrorKind::DimMismatch, "branch " + std::to_string(i) + " is " +
                                              std::string(to_string(have.family)) + " dim " +
                                              std::to_string(have.feature_dim) + ", spec expects " +
                                              std::string(to_string(want.family)) + " dim " +
                                              std::to_string(want.feature_dim));
    }
  }
  return std::make_unique<EnsembleModel>(std::move(branches), spec, seed);
}

Tensor ensemble_forward(const EnsembleModel& model, const Tensor& batch) {
  return model.predict_proba(batch);
}

TrainingHistory train_ensemble(EnsembleModel& model, const BatchSource& train_stream,
                               const BatchSource& val_stream, const TrainingConfig& cfg,
                               const TrainCallbacks& callbacks) {
  model.set_branch_trainable(model.spec().branch_trainable);
  return train(model, train_stream, val_stream, cfg, callbacks);
}

Json ensemble_topology(const EnsembleModel& model, const std::vector<BranchReference>& refs) {
  Json branches = Json::array();
  const auto offsets = model.branch_offsets();
  for (std::size_t i = 0; i < model.num_branches(); ++i) {
    Json b = to_json(model.spec().branches[i]);
    b["offset"] = offsets[i];
    if (i < refs.size()) {
      b["name"] = refs[i].name;
      b["checkpoint"] = refs[i].checkpoint.generic_string();
      b["sha256"] = refs[i].sha256;
    }
    branches.push_back(b);
  }
  Json layers = Json::array();
  std::size_t in = model.spec().fused_dim();
  for (auto w : model.spec().dense_widths) {
    layers.push_back(Json{{"type", "dense"}, {"in", in}, {"out", w}, {"activation", "tanh"}});
    in = w;
  }
  layers.push_back(Json{{"type", "dense"}, {"in", in}, {"out", model.spec().num_classes}, {"activation", "softmax"}});
  return Json{{"branches", branches},
              {"fused_dim", model.spec().fused_dim()},
              {"fusion_head", layers},
              {"branch_trainable", model.spec().branch_trainable},
              {"dropout", model.spec().dropout}};
}

void save_ensemble(const EnsembleModel& model, const LabelCodec& codec,
                   const std::vector<BranchReference>& refs, const std::filesystem::path& path) {
  Json ref_json = Json::array();
  for (const auto& r : refs) {
    ref_json.push_back(Json{{"name", r.name}, {"checkpoint", r.checkpoint.generic_string()}, {"sha256", r.sha256}});
  }
  Json meta{{"kind", "ensemble"}, {"spec", to_json(model.spec())}, {"codec", to_json(codec)}, {"branch_refs", ref_json}};
  auto& mutable_model = const_cast<EnsembleModel&>(model);
  write_checkpoint(path, meta, collect_tensors(mutable_model.stores()));
}

LoadedEnsemble load_ensemble(const std::filesystem::path& path) {
  auto data = read_checkpoint(path);
  if (data.meta.value("kind", "") != "ensemble") {
    throw Error(ErrorKind::InvalidConfig, path.string() + " is not an ensemble checkpoint");
  }
  const EnsembleSpec spec = ensemble_spec_from_json(data.meta.at("spec"));
  std::vector<std::unique_ptr<FeatureExtractor>> branches;
  for (const auto& b : spec.branches) branches.push_back(construct_architecture(b, 0));
  LoadedEnsemble out;
  out.codec = codec_from_json(data.meta.at("codec"));
  out.model = build_ensemble(std::move(branches), spec, 0);
  load_tensors(out.model->stores(), data.tensors);
  return out;
}

}  // namespace ckd
