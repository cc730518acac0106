#pragma once

#include <string>
#include <vector>

namespace tides::cli {

// Writes `path.tmp` then renames it over `path`.
void write_file_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

// Shortest decimal that parses back to the same double; "nan" for NaN.
std::string format_number(double v);

struct ChartSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
};

// Standalone SVG line chart: axes with ticks, one polyline per series and a
// legend. Non-finite points are skipped. Output depends only on the inputs.
// Throws std::invalid_argument on no series, an empty series, mismatched x/y
// lengths, or nonpositive values on a log axis.
std::string render_svg(const std::vector<ChartSeries>& series, const ChartSpec& spec);
void emit_svg(const std::vector<ChartSeries>& series, const ChartSpec& spec, const std::string& path);

}  // namespace tides::cli
