#pragma once

#include "posenorm/evaluate.hpp"
#include "posenorm/posehead.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace posenorm {

struct Series {
  std::string label;
  std::vector<double> x, y;
  std::vector<double> err;  ///< half-widths; empty for none
};

struct Figure {
  std::string title;
  std::string x_name = "x";
  std::string y_name = "y";
  std::vector<Series> series;
  std::map<double, std::string> x_ticks;  ///< optional named ticks (for example shots)
  std::optional<std::pair<double, double>> y_range;
};

/// Writes <stem>.png and <stem>.csv into dir. The table header is
/// `series,<x_name>,x_label,<y_name>,ci95`, numbers at 17 significant digits.
void write_figure(const std::filesystem::path& dir, const std::string& stem, const Figure& figure);

/// Series data of a figure table (names and ticks restored, title not stored).
Figure read_figure_table(const std::filesystem::path& csv);

/// Rasterizes only.
void render_figure(const std::filesystem::path& png, const Figure& figure);

/// Accuracy against shots (1, 5, all) per labelled group of reports.
Figure accuracy_vs_shots(const std::map<std::string, std::vector<EvalReport>>& groups);

/// PCK against threshold per labelled curve.
Figure pck_vs_threshold(const std::map<std::string, std::vector<PckPoint>>& curves);

/// Accuracy against annotation fraction; `baseline` draws a flat reference line.
Figure accuracy_vs_fraction(const std::vector<std::pair<double, EvalReport>>& points,
                            const std::optional<EvalReport>& baseline = std::nullopt);

/// Heatmap channels tiled beside the image as a PNG.
void write_heatmap_image(const std::filesystem::path& png, const ImageSample& sample, const PartHeatmap& heatmap);

}  // namespace posenorm
