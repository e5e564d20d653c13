#pragma once

#include <filesystem>

namespace mmpath {

// Renders run_dir/report.md plus loss_curve.svg from loss_log.csv,
// metrics.csv and config.resolved.json. Deterministic: unchanged inputs
// give byte-identical outputs.
void write_report(const std::filesystem::path& run_dir);

} // namespace mmpath
