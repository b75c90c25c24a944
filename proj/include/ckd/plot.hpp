#pragma once

#include <filesystem>
#include <vector>

#include "ckd/metrics.hpp"

namespace ckd {

// confusion.png, roc_<class>.png and pr_<class>.png under dir, rendered from
// the report alone. Returns the written paths.
std::vector<std::filesystem::path> render_plots(const EvaluationReport& report, const std::filesystem::path& dir);

}  // namespace ckd
