#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace rft {

/// One row of a results CSV (`config,threshold1,threshold2,threshold3`).
struct ResultRow {
  std::string config;
  std::array<double, 3> values = {0, 0, 0};
};

struct ResultTable {
  std::array<std::string, 3> headers = {"threshold1", "threshold2", "threshold3"};
  std::vector<ResultRow> rows;
};

void save_results_csv(const ResultTable& table, const std::filesystem::path& path);
ResultTable load_results_csv(const std::filesystem::path& path);
/// Fixed-width text table for terminals.
std::string format_table(const ResultTable& table);

/// Mean `total` per epoch from a training log CSV.
std::vector<double> epoch_means_from_log(const std::filesystem::path& log);

/// Grouped bar chart (one group per config, one bar per threshold) as SVG.
void plot_success_rates(const ResultTable& table, const std::string& title, const std::filesystem::path& svg);

struct Curve {
  std::string label;
  std::vector<double> values;
};

/// Line chart of per-epoch losses as SVG.
void plot_curves(const std::vector<Curve>& curves, const std::string& title, const std::filesystem::path& svg);

}  // namespace rft
