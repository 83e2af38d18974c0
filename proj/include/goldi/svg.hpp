#pragma once

#include <string>
#include <vector>

namespace goldi::io {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

// Deterministic standalone SVG renderers: fixed formatting, no timestamps.
std::string line_plot_svg(const std::string& title, const std::string& xlabel,
                          const std::string& ylabel,
                          const std::vector<Series>& series, bool log_y = false);

std::string bar_chart_svg(const std::string& title,
                          const std::vector<std::string>& labels,
                          const std::vector<double>& values);

}  // namespace goldi::io
