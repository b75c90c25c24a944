#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ckd {

enum class Split { Unassigned, Train, Test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct SampleRecord {
  std::filesystem::path path;
  std::string class_name;
  std::size_t class_index = 0;
  Split split = Split::Unassigned;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

/// Bidirectional class name <-> index mapping. Classes are kept in
/// lexicographic order so indices are stable across machines.
class LabelCodec {
 public:
  LabelCodec() = default;
  explicit LabelCodec(std::vector<std::string> classes);

  std::size_t num_classes() const noexcept { return classes_.size(); }
  const std::vector<std::string>& classes() const noexcept { return classes_; }

  std::size_t index_of(std::string_view name) const;
  const std::string& decode(std::size_t index) const;
  std::vector<double> encode_one_hot(std::string_view name) const;

  friend bool operator==(const LabelCodec&, const LabelCodec&) = default;

 private:
  std::vector<std::string> classes_;
};

std::vector<double> one_hot(std::size_t class_index, std::size_t num_classes);

struct Manifest {
  std::vector<SampleRecord> records;
  std::map<std::string, std::size_t> class_counts;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return records.size(); }
  Manifest subset(Split split) const;
  LabelCodec codec() const;

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

struct ScanIssue {
  std::filesystem::path path;
  std::string reason;
};

struct ScanOptions {
  // Abort on the first unreadable image instead of excluding it.
  bool strict = false;
};

struct ScanResult {
  Manifest manifest;
  LabelCodec codec;
  std::vector<ScanIssue> issues;
};

bool has_image_extension(const std::filesystem::path& path);
// Checks the PNG or JPEG signature bytes.
bool probe_image_header(const std::filesystem::path& path);

ScanResult scan_dataset(const std::filesystem::path& root, const ScanOptions& options = {});

// Per class: round(count * train_fraction) (ties to even) records go to train.
std::pair<Manifest, Manifest> stratified_split(const Manifest& manifest, double train_fraction,
                                               std::uint64_t seed);

// Union of two split manifests, re-sorted by path.
Manifest merge_manifests(const Manifest& a, const Manifest& b);

std::string manifest_to_csv(const Manifest& manifest);
Manifest manifest_from_csv(std::string_view text);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

void write_scan_errors(const std::vector<ScanIssue>& issues, const std::filesystem::path& path);

}  // namespace ckd
