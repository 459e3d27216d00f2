#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace fixseg {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;  ///< non-finite values leave a gap
};

/// Self-contained SVG line chart with axes, ticks and a legend.
std::string render_line_chart(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                              const std::string& y_label, int width = 720, int height = 420);

/// Numeric CSV with a header row; empty cells read as NaN.
std::map<std::string, std::vector<double>> read_numeric_csv(const std::filesystem::path& file);

}  // namespace fixseg
