#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "ddhom/common.hpp"
#include "ddhom/csvio.hpp"

namespace ddhom {

// Minimal self-contained SVG plotting: scatter and line series on a boxed
// axis with linear ticks. Enough for parity plots and learning curves
// without a plotting dependency.
class SvgPlot {
 public:
  SvgPlot(std::string title, std::string xlabel, std::string ylabel)
      : title_(std::move(title)), xlabel_(std::move(xlabel)), ylabel_(std::move(ylabel)) {}

  void add_scatter(const std::vector<double>& x, const std::vector<double>& y, const std::string& color,
                   const std::string& label = "") {
    series_.push_back({x, y, color, label, false});
    grow_range(x, y);
  }
  void add_line(const std::vector<double>& x, const std::vector<double>& y, const std::string& color,
                const std::string& label = "") {
    series_.push_back({x, y, color, label, true});
    grow_range(x, y);
  }
  void add_diagonal(const std::string& color = "#888888") { diagonal_ = true, diag_color_ = color; }
  void log_y(bool v) { log_y_ = v; }

  void write(const std::string& path) const {
    double xmin = xmin_, xmax = xmax_, ymin = ymin_, ymax = ymax_;
    if (!(xmax > xmin)) xmax = xmin + 1.0;
    if (!(ymax > ymin)) ymax = ymin + 1.0;
    if (log_y_) {
      ymin = std::log10(std::max(1e-300, ymin));
      ymax = std::log10(std::max(1e-299, ymax));
      if (!(ymax > ymin)) ymax = ymin + 1.0;
    }
    double xpad = 0.05 * (xmax - xmin), ypad = 0.05 * (ymax - ymin);
    xmin -= xpad;
    xmax += xpad;
    ymin -= ypad;
    ymax += ypad;

    const int W = 640, H = 480, ml = 70, mr = 20, mt = 40, mb = 50;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto py = [&](double yv) {
      double y = log_y_ ? std::log10(std::max(1e-300, yv)) : yv;
      return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb);
    };

    std::ofstream out(path);
    if (!out) throw Error("cannot open for writing: " + path);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << W / 2 << "' y='24' font-size='16' text-anchor='middle'>" << title_ << "</text>\n";
    out << "<rect x='" << ml << "' y='" << mt << "' width='" << W - ml - mr << "' height='" << H - mt - mb
        << "' fill='none' stroke='black'/>\n";
    // ticks
    for (int t = 0; t <= 4; ++t) {
      double fx = xmin + (xmax - xmin) * t / 4.0;
      double fy = ymin + (ymax - ymin) * t / 4.0;
      out << "<text x='" << px(fx) << "' y='" << H - mb + 18 << "' font-size='10' text-anchor='middle'>"
          << format_tick(fx, false) << "</text>\n";
      out << "<text x='" << ml - 6 << "' y='" << H - mb - (H - mt - mb) * t / 4.0 + 4
          << "' font-size='10' text-anchor='end'>" << format_tick(fy, log_y_) << "</text>\n";
    }
    out << "<text x='" << W / 2 << "' y='" << H - 12 << "' font-size='12' text-anchor='middle'>" << xlabel_
        << "</text>\n";
    out << "<text x='16' y='" << H / 2 << "' font-size='12' text-anchor='middle' transform='rotate(-90 16 "
        << H / 2 << ")'>" << ylabel_ << "</text>\n";
    if (diagonal_) {
      double lo = std::max(xmin, log_y_ ? std::pow(10.0, ymin) : ymin);
      double hi = std::min(xmax, log_y_ ? std::pow(10.0, ymax) : ymax);
      out << "<line x1='" << px(lo) << "' y1='" << py(lo) << "' x2='" << px(hi) << "' y2='" << py(hi)
          << "' stroke='" << diag_color_ << "' stroke-dasharray='4 3'/>\n";
    }
    int li = 0;
    for (const auto& s : series_) {
      if (s.line) {
        out << "<polyline fill='none' stroke='" << s.color << "' stroke-width='1.5' points='";
        for (std::size_t k = 0; k < s.x.size(); ++k) out << px(s.x[k]) << "," << py(s.y[k]) << " ";
        out << "'/>\n";
      } else {
        for (std::size_t k = 0; k < s.x.size(); ++k)
          out << "<circle cx='" << px(s.x[k]) << "' cy='" << py(s.y[k]) << "' r='2' fill='" << s.color
              << "' fill-opacity='0.6'/>\n";
      }
      if (!s.label.empty()) {
        out << "<text x='" << W - mr - 8 << "' y='" << mt + 16 + 14 * li << "' font-size='11' text-anchor='end' fill='"
            << s.color << "'>" << s.label << "</text>\n";
        ++li;
      }
    }
    out << "</svg>\n";
  }

 private:
  struct Series {
    std::vector<double> x, y;
    std::string color, label;
    bool line = false;
  };

  static std::string format_tick(double v, bool as_log) {
    char buf[32];
    if (as_log)
      std::snprintf(buf, sizeof(buf), "1e%.0f", v);
    else
      std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
  }

  void grow_range(const std::vector<double>& x, const std::vector<double>& y) {
    for (double v : x) {
      xmin_ = std::min(xmin_, v);
      xmax_ = std::max(xmax_, v);
    }
    for (double v : y) {
      ymin_ = std::min(ymin_, v);
      ymax_ = std::max(ymax_, v);
    }
  }

  std::string title_, xlabel_, ylabel_;
  std::vector<Series> series_;
  bool diagonal_ = false;
  bool log_y_ = false;
  std::string diag_color_;
  double xmin_ = 1e300, xmax_ = -1e300, ymin_ = 1e300, ymax_ = -1e300;
};

/// 8-bit grayscale PGM, values min-max normalized (an all-equal image maps
/// to black).
inline void write_pgm(const std::string& path, int width, int height, const std::vector<double>& values) {
  if (static_cast<std::size_t>(width) * height != values.size()) throw InvalidInputError("write_pgm: size mismatch");
  double lo = 1e300, hi = -1e300;
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double span = hi - lo;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  out << "P5\n" << width << " " << height << "\n255\n";
  for (double v : values) {
    unsigned char b = span > 0.0 ? static_cast<unsigned char>(255.0 * (v - lo) / span + 0.5) : 0;
    out.put(static_cast<char>(b));
  }
}

}  // namespace ddhom
