#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "ckd/dataset.hpp"
#include "ckd/model_zoo.hpp"
#include "ckd/run_config.hpp"

namespace ckd::cli {

// Runs one CLI invocation; returns the process exit code
// (0 success, 2 usage/config, 3 missing prerequisite, 4 runtime failure).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Writes the synthetic class-coloured noise corpus: per_class PNGs of
// size x size under root/{Cyst,Normal,Stone,Tumor}.
void write_fixture(const std::filesystem::path& root, std::size_t per_class, std::size_t size, std::uint64_t seed);

struct LoadedModel {
  std::unique_ptr<Classifier> model;
  LabelCodec codec;
  std::string kind;  // "classifier" or "ensemble"
};

// Loads either checkpoint flavour; MissingCheckpoint if absent.
LoadedModel load_model(const std::filesystem::path& checkpoint);

// Model names in report order: configured families, then "ensemble".
std::vector<std::string> model_names(const RunConfig& cfg);

// comparison.csv text built from the report.json files that exist.
std::string comparison_csv(const RunConfig& cfg);

}  // namespace ckd::cli
