#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mit/model.hpp"

namespace mit {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          std::span<const Series> series);
/// Values in [0,1]; missing entries are drawn as an empty slot.
std::string bar_chart_svg(const std::string& title, std::span<const std::string> labels,
                          std::span<const std::optional<double>> values);

using TsvTable = std::vector<std::vector<std::string>>;
TsvTable read_tsv(const std::filesystem::path& path);
void write_tsv(const TsvTable& table, const std::filesystem::path& path);

/// scene, IoU per class, mIoU, then an `all` row (with mAP when available).
TsvTable evaluation_table(const EvaluationReport& report, std::span<const std::string> class_names);

/// Reads steps.tsv / epochs.tsv (and eval.tsv when present) from `run_dir`
/// and writes loss_curve.svg, class_iou.svg and the TSV tables to `out_dir`.
/// Returns the written paths.
std::vector<std::filesystem::path> write_report(const std::filesystem::path& run_dir,
                                                const std::filesystem::path& out_dir);

}  // namespace mit
