#pragma once

#include <string>
#include <vector>

namespace prolix {

struct ChartSeries {
  std::string label;
  std::vector<double> xs;
  std::vector<double> ys;
};

/// Renders one or more line series into a standalone SVG document. Output is
/// deterministic: fixed canvas, fixed palette, coordinates printed at two
/// decimals. Throws EmptyInputError when no series carries a point and
/// DimensionMismatchError when xs/ys lengths differ.
std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<ChartSeries>& series);

/// Renders labeled vertical bars; same determinism rules as line_chart_svg.
std::string bar_chart_svg(const std::string& title, const std::string& y_label,
                          const std::vector<std::string>& labels,
                          const std::vector<double>& values);

}  // namespace prolix
