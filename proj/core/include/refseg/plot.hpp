#pragma once

// SVG line charts of loss-weight sweeps read back from grid CSV reports.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace refseg {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;  ///< sorted by x
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

std::string render_svg(const LineChart& chart, int width = 640, int height = 420);

/// Header-keyed rows of a CSV document; quoted fields are unescaped.
std::vector<std::map<std::string, std::string>> parse_csv(std::string_view text);

/// For miou and nta_iou, one chart against each loss weight with a series per value of the
/// other weight; rows sharing both weights (different seeds) are averaged. Returns the files written.
std::vector<std::filesystem::path> plot_lambda_sweep(std::string_view grid_csv, const std::filesystem::path& out_dir);

}  // namespace refseg
