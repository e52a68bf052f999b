#pragma once

#include <filesystem>
#include <vector>

#include "densemtl/trainer.hpp"

namespace densemtl {

/// One row per run: name, architecture, iterations, one column per task metric, delta.
void write_results_table(const std::filesystem::path& path, const std::vector<RunReport>& reports);

/// Log-scale loss curves of every run on one canvas.
void plot_loss_curves(const std::filesystem::path& path, const std::vector<RunReport>& reports);

/// Bar chart of one task metric across runs. Runs without the task are skipped.
void plot_metric_bars(const std::filesystem::path& path, const std::vector<RunReport>& reports, Task task);

/// Every report.json below `runs_dir`, sorted by path.
std::vector<RunReport> collect_reports(const std::filesystem::path& runs_dir);

/// Writes results.csv, per-run metric CSVs, loss_curves.png and one
/// metric_<task>.png per task. Returns the number of runs found.
size_t write_report_bundle(const std::filesystem::path& runs_dir, const std::filesystem::path& out_dir);

}  // namespace densemtl
