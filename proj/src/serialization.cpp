#include "ckd/serialization.hpp"

#include <fstream>
#include <sstream>

#include "ckd/error.hpp"

namespace ckd {

namespace {

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("field '") + key + "': " + e.what());
  }
}

void require_object(const Json& j, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, where + " must be an object");
}

}  // namespace

void require_known_keys(const Json& j, std::initializer_list<const char*> allowed,
                        const std::string& where) {
  require_object(j, where);
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || item.key() == a;
    if (!known) throw Error(ErrorKind::InvalidConfig, "unknown key '" + item.key() + "' in " + where);
  }
}

Json to_json(ImageSize size) { return Json::array({size.height, size.width}); }

ImageSize image_size_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_unsigned() || !j[1].is_number_unsigned()) {
    throw Error(ErrorKind::InvalidConfig, "image size must be [height, width]");
  }
  return {j[0].get<std::size_t>(), j[1].get<std::size_t>()};
}

Json to_json(const Preprocessing& pre) {
  return Json{{"id", pre.id}, {"mean", pre.mean}, {"stddev", pre.stddev}};
}

Preprocessing preprocessing_from_json(const Json& j) {
  if (j.is_string()) return preprocessing_preset(j.get<std::string>());
  require_known_keys(j, {"id", "mean", "stddev"}, "preprocessing");
  Preprocessing pre;
  pre.id = get_or<std::string>(j, "id", "custom");
  pre.mean = get_or(j, "mean", pre.mean);
  pre.stddev = get_or(j, "stddev", pre.stddev);
  for (double s : pre.stddev) {
    if (!(s > 0.0)) throw Error(ErrorKind::InvalidConfig, "preprocessing stddev must be > 0");
  }
  return pre;
}

Json to_json(const BackboneSpec& spec) {
  return Json{{"family", to_string(spec.family)},
              {"variant", to_string(spec.variant)},
              {"input_size", to_json(spec.input_size)},
              {"feature_dim", spec.feature_dim},
              {"preprocessing", to_json(spec.preprocessing)}};
}

BackboneSpec backbone_spec_from_json(const Json& j) {
  require_known_keys(j, {"family", "variant", "input_size", "feature_dim", "preprocessing"},
                     "backbone spec");
  if (!j.contains("family")) throw Error(ErrorKind::InvalidConfig, "backbone spec needs 'family'");
  const auto family = parse_family(j.at("family").get<std::string>());
  const auto variant = parse_variant(get_or<std::string>(j, "variant", "tiny_random"));
  const ImageSize size = j.contains("input_size") ? image_size_from_json(j.at("input_size"))
                                                  : ImageSize{224, 224};
  BackboneSpec spec = make_backbone_spec(family, variant, size);
  spec.feature_dim = get_or(j, "feature_dim", spec.feature_dim);
  if (j.contains("preprocessing")) spec.preprocessing = preprocessing_from_json(j.at("preprocessing"));
  return spec;
}

Json to_json(const AugmentationConfig& cfg) {
  return Json{{"target_size", to_json(cfg.target_size)},
              {"rotation_range_deg", cfg.rotation_range_deg},
              {"zoom_range", cfg.zoom_range},
              {"width_shift", cfg.width_shift},
              {"height_shift", cfg.height_shift},
              {"horizontal_flip", cfg.horizontal_flip},
              {"vertical_flip", cfg.vertical_flip},
              {"rescale", cfg.rescale}};
}

AugmentationConfig augmentation_from_json(const Json& j) {
  require_known_keys(j,
                     {"target_size", "rotation_range_deg", "zoom_range", "width_shift",
                      "height_shift", "horizontal_flip", "vertical_flip", "rescale"},
                     "augmentation");
  AugmentationConfig cfg;
  if (j.contains("target_size")) cfg.target_size = image_size_from_json(j.at("target_size"));
  cfg.rotation_range_deg = get_or(j, "rotation_range_deg", cfg.rotation_range_deg);
  cfg.zoom_range = get_or(j, "zoom_range", cfg.zoom_range);
  cfg.width_shift = get_or(j, "width_shift", cfg.width_shift);
  cfg.height_shift = get_or(j, "height_shift", cfg.height_shift);
  cfg.horizontal_flip = get_or(j, "horizontal_flip", cfg.horizontal_flip);
  cfg.vertical_flip = get_or(j, "vertical_flip", cfg.vertical_flip);
  cfg.rescale = get_or(j, "rescale", cfg.rescale);
  cfg.validate();
  return cfg;
}

Json to_json(const LabelCodec& codec) { return Json{{"classes", codec.classes()}}; }

LabelCodec codec_from_json(const Json& j) {
  require_known_keys(j, {"classes"}, "label codec");
  return LabelCodec(j.at("classes").get<std::vector<std::string>>());
}

std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

void write_json(const Json& j, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << dump_json(j);
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingPrerequisite, "cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return Json::parse(buffer.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
  }
}

}  // namespace ckd
