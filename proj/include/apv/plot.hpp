#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "apv/metrics.hpp"

namespace apv {

// Renders per-key IQM curves across runs with a percentile-bootstrap CI band
// into an uncompressed 24-bit BMP. Deterministic for identical inputs.
void plot_curves(const std::vector<MetricLog>& logs, const std::vector<std::string>& keys,
                 const std::filesystem::path& out_path);

}  // namespace apv
