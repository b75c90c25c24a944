#include "ckd/run_config.hpp"

#include "ckd/error.hpp"

namespace ckd {

RunConfig RunConfig::defaults(Variant variant) {
  RunConfig cfg;
  for (auto family : all_families()) {
    cfg.backbones.push_back(make_backbone_spec(family, variant, cfg.augmentation.target_size));
  }
  cfg.ensemble.branches = cfg.backbones;
  return cfg;
}

const BackboneSpec* RunConfig::backbone(BackboneFamily family) const {
  for (const auto& b : backbones) {
    if (b.family == family) return &b;
  }
  return nullptr;
}

void RunConfig::validate() const {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorKind::InvalidConfig, "train_fraction must lie in (0, 1)");
  }
  augmentation.validate();
  training.validate();
  lime.validate();
  for (const auto& b : backbones) {
    if (!(b.input_size == augmentation.target_size)) {
      throw Error(ErrorKind::InvalidConfig, std::string(to_string(b.family)) +
                                                " input_size differs from augmentation.target_size");
    }
  }
  if (!ensemble.branches.empty()) ensemble.validate();
}

Json to_json(const RunConfig& cfg) {
  Json backbones = Json::array();
  for (const auto& b : cfg.backbones) backbones.push_back(to_json(b));
  return Json{{"dataset_root", cfg.dataset_root.generic_string()},
              {"seed", cfg.seed},
              {"output_dir", cfg.output_dir.generic_string()},
              {"weights_dir", cfg.weights_dir.generic_string()},
              {"train_fraction", cfg.train_fraction},
              {"freeze_policy", to_string(cfg.freeze_policy)},
              {"augmentation", to_json(cfg.augmentation)},
              {"training", to_json(cfg.training)},
              {"backbones", backbones},
              {"ensemble", to_json(cfg.ensemble)},
              {"lime", to_json(cfg.lime)}};
}

RunConfig run_config_from_json(const Json& j) {
  require_known_keys(j,
                     {"dataset_root", "seed", "output_dir", "weights_dir", "train_fraction", "freeze_policy",
                      "augmentation", "training", "backbones", "ensemble", "lime"},
                     "run config");
  RunConfig cfg = RunConfig::defaults();
  try {
    cfg.dataset_root = j.value("dataset_root", std::string());
    cfg.seed = j.value("seed", cfg.seed);
    cfg.output_dir = j.value("output_dir", cfg.output_dir.string());
    cfg.weights_dir = j.value("weights_dir", cfg.weights_dir.string());
    cfg.train_fraction = j.value("train_fraction", cfg.train_fraction);
    if (j.contains("freeze_policy")) cfg.freeze_policy = parse_freeze_policy(j.at("freeze_policy").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("run config: ") + e.what());
  }
  if (j.contains("augmentation")) cfg.augmentation = augmentation_from_json(j.at("augmentation"));
  if (j.contains("training")) cfg.training = training_config_from_json(j.at("training"));
  if (j.contains("lime")) cfg.lime = lime_config_from_json(j.at("lime"));
  if (j.contains("backbones")) {
    cfg.backbones.clear();
    for (const auto& b : j.at("backbones")) cfg.backbones.push_back(backbone_spec_from_json(b));
  } else {
    apply_input_size(cfg, cfg.augmentation.target_size);
  }
  if (j.contains("ensemble")) {
    cfg.ensemble = ensemble_spec_from_json(j.at("ensemble"));
    if (!j.at("ensemble").contains("branches")) cfg.ensemble.branches = cfg.backbones;
  } else {
    cfg.ensemble.branches = cfg.backbones;
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::InvalidConfig, "config file not found: " + path.string());
  return run_config_from_json(read_json(path));
}

namespace {

void retarget(BackboneSpec& spec, Variant variant, ImageSize size) {
  const Preprocessing pre = spec.preprocessing;
  spec = make_backbone_spec(spec.family, variant, size);
  spec.preprocessing = pre;
}

}  // namespace

void apply_variant(RunConfig& cfg, Variant variant) {
  for (auto& b : cfg.backbones) retarget(b, variant, b.input_size);
  for (auto& b : cfg.ensemble.branches) retarget(b, variant, b.input_size);
}

void apply_input_size(RunConfig& cfg, ImageSize size) {
  cfg.augmentation.target_size = size;
  for (auto& b : cfg.backbones) retarget(b, b.variant, size);
  for (auto& b : cfg.ensemble.branches) retarget(b, b.variant, size);
}

}  // namespace ckd
