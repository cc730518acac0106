#include "tides/cli/output.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tides::cli {

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, target);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

namespace {

constexpr double kWidth = 720, kHeight = 440;
constexpr double kLeft = 70, kRight = 190, kTop = 40, kBottom = 56;
constexpr std::array<const char*, 10> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string fixed(double v, int digits = 2) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Tick label in %g style, stable across platforms for the magnitudes we plot.
std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct Axis {
  double lo, hi;
  bool log;

  double map(double v, double from, double to) const {
    const double a = log ? std::log10(v) : v, l = log ? std::log10(lo) : lo, h = log ? std::log10(hi) : hi;
    return from + (a - l) / (h - l) * (to - from);
  }

  std::vector<double> ticks() const {
    std::vector<double> out;
    if (log) {
      for (double e = std::floor(std::log10(lo)); e <= std::ceil(std::log10(hi)); e += 1.0) {
        for (double m : {1.0, 2.0, 5.0}) {
          const double t = m * std::pow(10.0, e);
          if (t >= lo * (1 - 1e-12) && t <= hi * (1 + 1e-12)) out.push_back(t);
        }
      }
      return out;
    }
    const double raw = (hi - lo) / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
      step = m * mag;
      if (step >= raw) break;
    }
    for (double t = std::ceil(lo / step) * step; t <= hi + step * 1e-9; t += step) out.push_back(std::abs(t) < step * 1e-9 ? 0.0 : t);
    return out;
  }
};

Axis make_axis(const std::vector<ChartSeries>& series, bool use_x, bool log) {
  double lo = INFINITY, hi = -INFINITY;
  for (const ChartSeries& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double v = use_x ? s.x[i] : s.y[i];
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (log && v <= 0.0) {
        throw std::invalid_argument("svg: series '" + s.name + "' has a nonpositive value on a log axis");
      }
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!std::isfinite(lo)) {
    lo = log ? 1.0 : 0.0;
    hi = log ? 10.0 : 1.0;
  }
  if (hi <= lo) {
    const double pad = log ? 2.0 : std::max(1.0, std::abs(lo)) * 0.1;
    lo = log ? lo / pad : lo - pad;
    hi = log ? hi * pad : hi + pad;
  } else if (!log) {
    const double pad = 0.05 * (hi - lo);
    if (!use_x) {
      lo -= pad;
      hi += pad;
    }
  }
  return {lo, hi, log};
}

}  // namespace

std::string render_svg(const std::vector<ChartSeries>& series, const ChartSpec& spec) {
  if (series.empty()) throw std::invalid_argument("svg: no series to plot");
  for (const ChartSeries& s : series) {
    if (s.x.empty()) throw std::invalid_argument("svg: series '" + s.name + "' is empty");
    if (s.x.size() != s.y.size()) throw std::invalid_argument("svg: series '" + s.name + "' has mismatched x and y");
  }
  const Axis ax = make_axis(series, true, spec.log_x), ay = make_axis(series, false, spec.log_y);
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;

  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << fixed((x0 + x1) / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << escape(spec.title) << "</text>\n";

  o << "<g stroke=\"#dddddd\" stroke-width=\"1\">\n";
  for (double t : ax.ticks()) {
    const double px = ax.map(t, x0, x1);
    o << "<line x1=\"" << fixed(px) << "\" y1=\"" << fixed(y0) << "\" x2=\"" << fixed(px) << "\" y2=\"" << fixed(y1)
      << "\"/>\n";
  }
  for (double t : ay.ticks()) {
    const double py = ay.map(t, y0, y1);
    o << "<line x1=\"" << fixed(x0) << "\" y1=\"" << fixed(py) << "\" x2=\"" << fixed(x1) << "\" y2=\"" << fixed(py)
      << "\"/>\n";
  }
  o << "</g>\n";
  o << "<g stroke=\"black\" stroke-width=\"1\">\n";
  o << "<line x1=\"" << fixed(x0) << "\" y1=\"" << fixed(y0) << "\" x2=\"" << fixed(x1) << "\" y2=\"" << fixed(y0)
    << "\"/>\n";
  o << "<line x1=\"" << fixed(x0) << "\" y1=\"" << fixed(y0) << "\" x2=\"" << fixed(x0) << "\" y2=\"" << fixed(y1)
    << "\"/>\n";
  o << "</g>\n";
  o << "<g text-anchor=\"middle\">\n";
  for (double t : ax.ticks()) {
    o << "<text x=\"" << fixed(ax.map(t, x0, x1)) << "\" y=\"" << fixed(y0 + 16) << "\">" << tick_label(t)
      << "</text>\n";
  }
  o << "</g>\n<g text-anchor=\"end\">\n";
  for (double t : ay.ticks()) {
    o << "<text x=\"" << fixed(x0 - 6) << "\" y=\"" << fixed(ay.map(t, y0, y1) + 4) << "\">" << tick_label(t)
      << "</text>\n";
  }
  o << "</g>\n";
  o << "<text x=\"" << fixed((x0 + x1) / 2) << "\" y=\"" << fixed(kHeight - 14) << "\" text-anchor=\"middle\">"
    << escape(spec.x_label) << "</text>\n";
  o << "<text transform=\"translate(18 " << fixed((y0 + y1) / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(spec.y_label) << "</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const ChartSeries& s = series[i];
    const char* color = kPalette[i % kPalette.size()];
    std::string points;
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) continue;
      if (!points.empty()) points += ' ';
      points += fixed(ax.map(s.x[k], x0, x1)) + "," + fixed(ay.map(s.y[k], y0, y1));
    }
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\""
      << (i >= kPalette.size() ? " stroke-dasharray=\"6 3\"" : "") << " points=\"" << points << "\"/>\n";
  }

  o << "<g>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double ly = kTop + 10 + 18.0 * static_cast<double>(i);
    const double lx = kWidth - kRight + 16;
    o << "<line x1=\"" << fixed(lx) << "\" y1=\"" << fixed(ly) << "\" x2=\"" << fixed(lx + 22) << "\" y2=\""
      << fixed(ly) << "\" stroke=\"" << kPalette[i % kPalette.size()] << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << fixed(lx + 28) << "\" y=\"" << fixed(ly + 4) << "\">" << escape(series[i].name)
      << "</text>\n";
  }
  o << "</g>\n</svg>\n";
  return o.str();
}

void emit_svg(const std::vector<ChartSeries>& series, const ChartSpec& spec, const std::string& path) {
  write_file_atomic(path, render_svg(series, spec));
}

}  // namespace tides::cli
