#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

#include "dcl/batches.hpp"

namespace dcl {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct ChartOptions {
  std::int64_t width = 640;
  std::int64_t height = 400;
  std::string title;
  std::string x_label;
  std::string y_label;
};

/// Line chart as a (3, height, width) image in [-1, 1].  Non-finite points are skipped.
torch::Tensor render_line_chart(const std::vector<PlotSeries>& series, const ChartOptions& options);
void write_line_chart(const std::filesystem::path& path, const std::vector<PlotSeries>& series,
                      const ChartOptions& options);

/// Stacks each batch as one row of tiles (upscaled by `scale`), separated by a
/// 2-pixel gap, and writes the grid as PNG.
void write_image_grid(const std::filesystem::path& path, const std::vector<ImageBatch>& rows, std::int64_t scale = 2);

/// Parsed CSV: header names and numeric-or-text cells.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  static CsvTable read(const std::filesystem::path& path);
  /// Index of `name` in the header, or -1.
  int column(const std::string& name) const;
};

/// Series of `y_column` against `x_column`, one per distinct value of
/// `group_column` (a single series when it is empty or absent).
std::vector<PlotSeries> series_from_table(const CsvTable& table, const std::string& x_column,
                                          const std::string& y_column, const std::string& group_column = "");

}  // namespace dcl
