#pragma once

#include <string>

#include <json.hpp>

#include "ckd/augmentation.hpp"
#include "ckd/dataset.hpp"
#include "ckd/model_zoo.hpp"

namespace ckd {

using Json = nlohmann::ordered_json;

Json to_json(ImageSize size);
ImageSize image_size_from_json(const Json& j);

Json to_json(const Preprocessing& pre);
Preprocessing preprocessing_from_json(const Json& j);

Json to_json(const BackboneSpec& spec);
BackboneSpec backbone_spec_from_json(const Json& j);

Json to_json(const AugmentationConfig& cfg);
AugmentationConfig augmentation_from_json(const Json& j);

Json to_json(const LabelCodec& codec);
LabelCodec codec_from_json(const Json& j);

// Rejects keys outside `allowed` with InvalidConfig naming `where`.
void require_known_keys(const Json& j, std::initializer_list<const char*> allowed,
                        const std::string& where);

// Stable text form: two-space indent, trailing newline.
std::string dump_json(const Json& j);
void write_json(const Json& j, const std::filesystem::path& path);
Json read_json(const std::filesystem::path& path);

}  // namespace ckd
