#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "contraj/metrics.hpp"
#include "contraj/runlog.hpp"

namespace contraj::plot {

/// Error-vs-task line chart: one series per evaluated task, points at every
/// training stage it appears in (median over demos and seeds). Writes the
/// figure and the underlying table.
void error_vs_task(const RunLog& log, const std::filesystem::path& svg_path,
                   const std::filesystem::path& csv_path);

/// Final-stage error boxplot, one box per named log.
void method_boxplot(const std::vector<std::pair<std::string, RunLog>>& logs,
                    const std::filesystem::path& svg_path,
                    const std::filesystem::path& csv_path);

/// Radar chart of the continual-learning metrics, one polygon per method.
void cl_radar(const std::vector<std::pair<std::string, metrics::CLReport>>& reports,
              const std::filesystem::path& svg_path);

/// Per-task training-time bars.
void timing_bars(const RunLog& log, const std::filesystem::path& svg_path,
                 const std::filesystem::path& csv_path);

}  // namespace contraj::plot
