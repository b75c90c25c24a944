#include "ckd/dataset.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ckd/error.hpp"
#include "ckd/rng.hpp"

namespace fs = std::filesystem;

namespace ckd {
namespace {

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\n\r") == std::string::npos) return value;
  std::string out = "\"";
  for (char ch : value) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::vector<std::string> parse_csv_line(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        fields.back() += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.emplace_back();
    } else {
      fields.back() += ch;
    }
  }
  return fields;
}

void recount(Manifest& m) {
  m.class_counts.clear();
  for (const auto& r : m.records) ++m.class_counts[r.class_name];
}

void sort_by_path(std::vector<SampleRecord>& records) {
  std::sort(records.begin(), records.end(), [](const SampleRecord& a, const SampleRecord& b) {
    return a.path.generic_string() < b.path.generic_string();
  });
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Test: return "test";
    case Split::Unassigned: return "unassigned";
  }
  return "unassigned";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "test") return Split::Test;
  if (text == "unassigned") return Split::Unassigned;
  throw Error(ErrorKind::InvalidConfig, "unknown split '" + std::string(text) + "'");
}

LabelCodec::LabelCodec(std::vector<std::string> classes) : classes_(std::move(classes)) {
  std::sort(classes_.begin(), classes_.end());
  if (std::adjacent_find(classes_.begin(), classes_.end()) != classes_.end()) {
    throw Error(ErrorKind::InvalidConfig, "duplicate class name in label codec");
  }
}

std::size_t LabelCodec::index_of(std::string_view name) const {
  auto it = std::lower_bound(classes_.begin(), classes_.end(), name);
  if (it == classes_.end() || *it != name) {
    throw Error(ErrorKind::IndexOutOfRange, "unknown class '" + std::string(name) + "'");
  }
  return static_cast<std::size_t>(it - classes_.begin());
}

const std::string& LabelCodec::decode(std::size_t index) const {
  if (index >= classes_.size()) {
    throw Error(ErrorKind::IndexOutOfRange, "class index " + std::to_string(index) +
                                                " out of range for " +
                                                std::to_string(classes_.size()) + " classes");
  }
  return classes_[index];
}

std::vector<double> LabelCodec::encode_one_hot(std::string_view name) const {
  return one_hot(index_of(name), num_classes());
}

std::vector<double> one_hot(std::size_t class_index, std::size_t num_classes) {
  if (class_index >= num_classes) {
    throw Error(ErrorKind::IndexOutOfRange, "class index " + std::to_string(class_index) +
                                                " out of range for " +
                                                std::to_string(num_classes) + " classes");
  }
  std::vector<double> v(num_classes, 0.0);
  v[class_index] = 1.0;
  return v;
}

Manifest Manifest::subset(Split split) const {
  Manifest out;
  out.seed = seed;
  for (const auto& r : records) {
    if (r.split == split) out.records.push_back(r);
  }
  recount(out);
  return out;
}

LabelCodec Manifest::codec() const {
  std::vector<std::string> names;
  for (const auto& [name, count] : class_counts) names.push_back(name);
  return LabelCodec(std::move(names));
}

bool has_image_extension(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

bool probe_image_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  std::array<unsigned char, 8> head{};
  in.read(reinterpret_cast<char*>(head.data()), head.size());
  const auto got = static_cast<std::size_t>(in.gcount());
  static constexpr std::array<unsigned char, 8> kPng{0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (got == 8 && head == kPng) return true;
  return got >= 3 && head[0] == 0xFF && head[1] == 0xD8 && head[2] == 0xFF;
}

ScanResult scan_dataset(const fs::path& root, const ScanOptions& options) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    throw Error(ErrorKind::MissingRoot, "dataset root '" + root.string() + "' does not exist");
  }
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) {
    throw Error(ErrorKind::MissingRoot,
                "dataset root '" + root.string() + "' has no class subdirectories");
  }

  ScanResult result;
  std::vector<std::string> names;
  for (const auto& dir : class_dirs) {
    const std::string class_name = dir.filename().string();
    std::size_t accepted = 0;
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
      if (entry.is_regular_file() && has_image_extension(entry.path())) {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      if (!probe_image_header(file)) {
        if (options.strict) {
          throw Error(ErrorKind::UnreadableImage, file.string() + " fails the image header probe");
        }
        result.issues.push_back({file, "unreadable image header"});
        continue;
      }
      result.manifest.records.push_back({file, class_name, 0, Split::Unassigned});
      ++accepted;
    }
    if (accepted == 0) {
      throw Error(ErrorKind::EmptyClass,
                  "class directory '" + dir.string() + "' holds no readable images");
    }
    names.push_back(class_name);
  }
  result.codec = LabelCodec(names);
  for (auto& r : result.manifest.records) r.class_index = result.codec.index_of(r.class_name);
  sort_by_path(result.manifest.records);
  recount(result.manifest);
  return result;
}

std::pair<Manifest, Manifest> stratified_split(const Manifest& manifest, double train_fraction,
                                               std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorKind::InvalidConfig, "train fraction must lie in (0, 1)");
  }
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    by_class[manifest.records[i].class_name].push_back(i);
  }
  std::vector<Split> assignment(manifest.records.size(), Split::Test);
  for (auto& [name, indices] : by_class) {
    const double share = std::nearbyint(static_cast<double>(indices.size()) * train_fraction);
    const auto train_count = static_cast<std::size_t>(share);
    if (indices.size() < 2 || train_count == 0 || train_count >= indices.size()) {
      throw Error(ErrorKind::DegenerateClass,
                  "class '" + name + "' with " + std::to_string(indices.size()) +
                      " samples cannot be split at fraction " + std::to_string(train_fraction));
    }
    const auto class_index = manifest.records[indices.front()].class_index;
    Rng rng(derive_seed({seed, 0x5917u, class_index}));
    rng.shuffle(std::span<std::size_t>(indices));
    for (std::size_t k = 0; k < train_count; ++k) assignment[indices[k]] = Split::Train;
  }

  Manifest train, test;
  train.seed = test.seed = seed;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    SampleRecord r = manifest.records[i];
    r.split = assignment[i];
    (r.split == Split::Train ? train : test).records.push_back(std::move(r));
  }
  recount(train);
  recount(test);
  return {std::move(train), std::move(test)};
}

Manifest merge_manifests(const Manifest& a, const Manifest& b) {
  Manifest out;
  out.seed = a.seed;
  out.records = a.records;
  out.records.insert(out.records.end(), b.records.begin(), b.records.end());
  sort_by_path(out.records);
  recount(out);
  return out;
}

std::string manifest_to_csv(const Manifest& manifest) {
  std::string out = "path,class_name,class_index,split\n";
  for (const auto& r : manifest.records) {
    out += csv_field(r.path.generic_string()) + "," + csv_field(r.class_name) + "," +
           std::to_string(r.class_index) + "," + std::string(to_string(r.split)) + "\n";
  }
  return out;
}

Manifest manifest_from_csv(std::string_view text) {
  Manifest m;
  std::size_t pos = 0;
  bool header = true;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto fields = parse_csv_line(line);
    if (header) {
      if (fields != std::vector<std::string>{"path", "class_name", "class_index", "split"}) {
        throw Error(ErrorKind::InvalidConfig, "manifest header must be path,class_name,class_index,split");
      }
      header = false;
      continue;
    }
    if (fields.size() != 4) {
      throw Error(ErrorKind::InvalidConfig, "manifest line " + std::to_string(line_no) +
                                                " has " + std::to_string(fields.size()) +
                                                " fields");
    }
    SampleRecord r;
    r.path = fs::path(fields[0]);
    r.class_name = fields[1];
    r.class_index = static_cast<std::size_t>(std::stoull(fields[2]));
    r.split = parse_split(fields[3]);
    m.records.push_back(std::move(r));
  }
  recount(m);
  return m;
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << manifest_to_csv(manifest);
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingPrerequisite, "manifest " + path.string() + " not found");
  std::ostringstream buf;
  buf << in.rdbuf();
  return manifest_from_csv(buf.str());
}

void write_scan_errors(const std::vector<ScanIssue>& issues, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  for (const auto& issue : issues) out << issue.path.generic_string() << " " << issue.reason << "\n";
}

}  // namespace ckd
