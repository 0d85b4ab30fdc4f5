#pragma once

#include <string>
#include <vector>

namespace densforge {

struct ChartSeries {
  std::string name;
  std::vector<double> values;
};

// Grouped bar chart, one group per category. Optional dashed horizontal reference line.
std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& categories,
                          const std::vector<ChartSeries>& series, const std::string& y_label,
                          const double* reference_line = nullptr);

// Polyline chart with categories evenly spaced along x.
std::string line_chart_svg(const std::string& title, const std::vector<std::string>& categories,
                           const std::vector<ChartSeries>& series, const std::string& y_label);

}  // namespace densforge
