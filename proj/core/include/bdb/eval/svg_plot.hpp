#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace bdb::eval {

/// Minimal static SVG charts: scatter and line series on linear axes.
struct Series {
  std::string label;
  std::vector<double> x, y;
  std::string colour;          // empty picks from the palette
  bool line = false;           // polyline through the points
  bool markers = true;
  std::string marker = "circle";  // circle | cross | square
  bool dashed = false;
};

struct Annotation {
  double x = 0.0, y = 0.0;
  std::string text;
};

struct Chart {
  std::string title;
  std::string x_label, y_label;
  std::vector<Series> series;
  std::vector<Annotation> annotations;
  // Fixed axis ranges; both ends equal means "fit the data".
  double x_min = 0.0, x_max = 0.0, y_min = 0.0, y_max = 0.0;
  // Explicit x ticks (positions and labels); empty means automatic.
  std::vector<double> x_ticks;
  std::vector<std::string> x_tick_labels;
  int width = 640, height = 480;
  bool legend = true;
};

const std::vector<std::string>& palette();

std::string render_svg(const Chart& chart);
void save_svg(const Chart& chart, const std::filesystem::path& path);

}  // namespace bdb::eval
