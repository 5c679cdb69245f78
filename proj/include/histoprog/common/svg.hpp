#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace histoprog {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  bool step = false;  // draw as a right-continuous step function
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
};

/// Standalone SVG line chart. Output depends only on the spec.
std::string render_svg(const PlotSpec& spec);
void write_svg(const std::filesystem::path& path, const PlotSpec& spec);

}  // namespace histoprog
