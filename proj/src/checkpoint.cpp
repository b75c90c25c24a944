#include "ckd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "ckd/error.hpp"

namespace ckd {

namespace {

constexpr char kMagic[] = "CKDCKPT1\n";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little endian");

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Json& meta,
                      const std::vector<NamedTensor>& tensors) {
  Json index = Json::array();
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    index.push_back(Json{{"name", t.name}, {"shape", t.value.shape()}, {"offset", offset}});
    offset += t.value.size();
  }
  const std::string header = Json{{"meta", meta}, {"tensors", index}}.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.write(kMagic, kMagicLen);
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& t : tensors) {
    out.write(reinterpret_cast<const char*>(t.value.ptr()),
              static_cast<std::streamsize>(t.value.size() * sizeof(double)));
  }
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingCheckpoint, "no checkpoint at " + path.string());
  char magic[kMagicLen];
  std::uint64_t len = 0;
  in.read(magic, kMagicLen);
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0 || len > (1u << 30)) {
    throw Error(ErrorKind::Io, path.string() + " is not a checkpoint");
  }
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  Json parsed;
  try {
    parsed = Json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Io, path.string() + ": bad header: " + e.what());
  }
  CheckpointData data;
  data.meta = parsed.at("meta");
  for (const auto& entry : parsed.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    std::vector<double> values(shape_size(shape));
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) throw Error(ErrorKind::Io, path.string() + " is truncated");
    data.tensors.push_back({entry.at("name").get<std::string>(), Tensor(std::move(shape), std::move(values))});
  }
  return data;
}

std::vector<NamedTensor> collect_tensors(const std::vector<StoreRef>& stores) {
  std::vector<NamedTensor> out;
  for (const auto& ref : stores) {
    for (const auto& p : ref.store->all()) out.push_back({ref.prefix + p.name, p.var->value});
  }
  return out;
}

void load_tensors(const std::vector<StoreRef>& stores, const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t.value;
  std::size_t used = 0;
  for (const auto& ref : stores) {
    for (auto& p : ref.store->all()) {
      const std::string name = ref.prefix + p.name;
      auto it = by_name.find(name);
      if (it == by_name.end()) throw Error(ErrorKind::ShapeMismatch, "checkpoint lacks '" + name + "'");
      if (it->second->shape() != p.var->value.shape()) {
        throw Error(ErrorKind::ShapeMismatch, "'" + name + "' has shape " +
                                                  shape_string(it->second->shape()) + ", model expects " +
                                                  shape_string(p.var->value.shape()));
      }
      p.var->value = *it->second;
      ++used;
    }
  }
  if (used != by_name.size()) {
    throw Error(ErrorKind::ShapeMismatch, "checkpoint holds " + std::to_string(by_name.size()) +
                                              " tensors, model uses " + std::to_string(used));
  }
}

std::filesystem::path WeightStore::file_for(BackboneFamily family, Variant variant) const {
  return root_ / std::string(to_string(family)) / (std::string(to_string(variant)) + ".ckpt");
}

std::vector<NamedTensor> WeightStore::load(BackboneFamily family, Variant variant) const {
  const auto file = file_for(family, variant);
  const auto manifest_path = root_ / "MANIFEST.json";
  const std::string key = std::string(to_string(family)) + "/" + std::string(to_string(variant));
  if (!std::filesystem::exists(file) || !std::filesystem::exists(manifest_path)) {
    throw Error(ErrorKind::WeightsUnavailable,
                "no weights for " + key + " under " + root_.string() + " (populate the store offline)");
  }
  const Json manifest = read_json(manifest_path);
  if (!manifest.contains(key)) throw Error(ErrorKind::WeightsUnavailable, key + " missing from MANIFEST.json");
  const std::string actual = sha256_file(file);
  if (manifest.at(key).get<std::string>() != actual) {
    throw Error(ErrorKind::WeightsUnavailable, key + " hash mismatch: " + actual);
  }
  return read_checkpoint(file).tensors;
}

void WeightStore::publish(BackboneFamily family, Variant variant,
                          const std::vector<NamedTensor>& tensors) const {
  const auto file = file_for(family, variant);
  write_checkpoint(file, Json{{"family", to_string(family)}, {"variant", to_string(variant)}}, tensors);
  const auto manifest_path = root_ / "MANIFEST.json";
  Json manifest = std::filesystem::exists(manifest_path) ? read_json(manifest_path) : Json::object();
  manifest[std::string(to_string(family)) + "/" + std::string(to_string(variant))] = sha256_file(file);
  write_json(manifest, manifest_path);
}

void save_classifier(const ClassifierModel& model, const LabelCodec& codec,
                     const std::filesystem::path& path) {
  Json meta{{"kind", "classifier"},
            {"spec", to_json(model.spec())},
            {"codec", to_json(codec)},
            {"num_classes", model.num_classes()},
            {"freeze_policy", to_string(model.freeze_policy())}};
  auto& mutable_model = const_cast<ClassifierModel&>(model);
  write_checkpoint(path, meta, collect_tensors(mutable_model.stores()));
}

LoadedClassifier load_classifier(const std::filesystem::path& path) {
  auto data = read_checkpoint(path);
  if (data.meta.value("kind", "") != "classifier") {
    throw Error(ErrorKind::InvalidConfig, path.string() + " is not a classifier checkpoint");
  }
  const BackboneSpec spec = backbone_spec_from_json(data.meta.at("spec"));
  LoadedClassifier out;
  out.codec = codec_from_json(data.meta.at("codec"));
  out.model = attach_head(construct_architecture(spec, 0), data.meta.at("num_classes").get<std::size_t>(),
                          0, parse_freeze_policy(data.meta.at("freeze_policy").get<std::string>()));
  load_tensors(out.model->stores(), data.tensors);
  return out;
}

}  // namespace ckd
