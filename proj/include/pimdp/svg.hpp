#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pimdp {

// Minimal deterministic SVG output: the same inputs always produce the same
// bytes, so plots can be diffed and regression-tested.

namespace svg_detail {
inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}
inline const char* kPalette[6] = {"#1f77b4", "#d62728", "#2ca02c",
                                  "#9467bd", "#ff7f0e", "#8c564b"};
}  // namespace svg_detail

struct CurvePoint {
  double x = 0.0;
  double y = 0.0;
  double band = 0.0;  // half-width of the shaded band (e.g. standard error)
};

struct CurveSeries {
  std::string name;
  std::vector<CurvePoint> points;
};

inline std::string svg_curves(const std::string& title, const std::string& x_label,
                              const std::string& y_label,
                              const std::vector<CurveSeries>& series) {
  const double w = 640, h = 420, ml = 70, mr = 20, mt = 40, mb = 50;
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
  bool first = true;
  for (const auto& s : series)
    for (const auto& p : s.points) {
      if (first) {
        x_min = x_max = p.x;
        y_min = p.y - p.band;
        y_max = p.y + p.band;
        first = false;
      }
      x_min = std::min(x_min, p.x);
      x_max = std::max(x_max, p.x);
      y_min = std::min(y_min, p.y - p.band);
      y_max = std::max(y_max, p.y + p.band);
    }
  if (x_max == x_min) x_max = x_min + 1;
  if (y_max == y_min) y_max = y_min + 1;
  const double pad = 0.05 * (y_max - y_min);
  y_min -= pad;
  y_max += pad;
  auto px = [&](double x) { return ml + (x - x_min) / (x_max - x_min) * (w - ml - mr); };
  auto py = [&](double y) { return h - mb - (y - y_min) / (y_max - y_min) * (h - mt - mb); };

  std::ostringstream os;
  using svg_detail::num;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  os << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title
     << "</text>\n";
  // Axes.
  os << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\""
     << h - mb << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
     << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = x_min + t * (x_max - x_min) / 4;
    const double yv = y_min + t * (y_max - y_min) / 4;
    os << "<text x=\"" << num(px(xv)) << "\" y=\"" << h - mb + 18
       << "\" text-anchor=\"middle\" font-size=\"11\">" << num(xv) << "</text>\n";
    os << "<text x=\"" << ml - 8 << "\" y=\"" << num(py(yv) + 4)
       << "\" text-anchor=\"end\" font-size=\"11\">" << num(yv) << "</text>\n";
  }
  os << "<text x=\"" << w / 2 << "\" y=\"" << h - 12
     << "\" text-anchor=\"middle\" font-size=\"13\">" << x_label << "</text>\n";
  os << "<text x=\"16\" y=\"" << h / 2
     << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 " << h / 2
     << ")\">" << y_label << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const char* color = svg_detail::kPalette[si % 6];
    const auto& pts = series[si].points;
    if (pts.empty()) continue;
    // Band polygon.
    bool has_band = false;
    for (const auto& p : pts)
      if (p.band > 0) has_band = true;
    if (has_band) {
      os << "<polygon fill=\"" << color << "\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
      for (const auto& p : pts) os << num(px(p.x)) << "," << num(py(p.y + p.band)) << " ";
      for (auto it = pts.rbegin(); it != pts.rend(); ++it)
        os << num(px(it->x)) << "," << num(py(it->y - it->band)) << " ";
      os << "\"/>\n";
    }
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& p : pts) os << num(px(p.x)) << "," << num(py(p.y)) << " ";
    os << "\"/>\n";
    // Legend.
    const double ly = mt + 16 * static_cast<double>(si);
    os << "<line x1=\"" << w - mr - 130 << "\" y1=\"" << ly << "\" x2=\"" << w - mr - 110
       << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << w - mr - 105 << "\" y=\"" << ly + 4 << "\" font-size=\"12\">"
       << series[si].name << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// Heatmap of a matrix; row 0 at the bottom so (x, y) cell indices read like
// board coordinates. NaN cells render grey; `marks` cells get a black outline
// (used to overlay obstacles).
inline std::string svg_heatmap(const std::string& title, const Eigen::MatrixXd& values,
                               const std::vector<std::pair<int, int>>& marks = {}) {
  const int nx = static_cast<int>(values.rows());
  const int ny = static_cast<int>(values.cols());
  const double cell = std::max(8.0, std::min(32.0, 480.0 / std::max(nx, ny)));
  const double ml = 50, mt = 40, mb = 20, mr = 80;
  const double w = ml + nx * cell + mr, h = mt + ny * cell + mb;
  double v_min = 0, v_max = 1;
  bool first = true;
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) {
      const double v = values(i, j);
      if (std::isnan(v)) continue;
      if (first) {
        v_min = v_max = v;
        first = false;
      }
      v_min = std::min(v_min, v);
      v_max = std::max(v_max, v);
    }
  if (v_max == v_min) v_max = v_min + 1;

  auto color = [&](double v) {
    const double t = std::min(1.0, std::max(0.0, (v - v_min) / (v_max - v_min)));
    const int r = static_cast<int>(255 * t);
    const int b = static_cast<int>(255 * (1 - t));
    char buf[16];
    std::snprintf(buf, sizeof(buf), "#%02x20%02x", r, b);
    return std::string(buf);
  };

  std::ostringstream os;
  using svg_detail::num;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w) << "\" height=\""
     << num(h) << "\" viewBox=\"0 0 " << num(w) << " " << num(h) << "\">\n";
  os << "<rect width=\"" << num(w) << "\" height=\"" << num(h) << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << num(w / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
     << title << "</text>\n";
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) {
      const double v = values(i, j);
      const std::string fill = std::isnan(v) ? "#bbbbbb" : color(v);
      os << "<rect x=\"" << num(ml + i * cell) << "\" y=\"" << num(mt + (ny - 1 - j) * cell)
         << "\" width=\"" << num(cell) << "\" height=\"" << num(cell) << "\" fill=\"" << fill
         << "\"/>\n";
    }
  for (const auto& [mx, my] : marks)
    os << "<rect x=\"" << num(ml + mx * cell) << "\" y=\"" << num(mt + (ny - 1 - my) * cell)
       << "\" width=\"" << num(cell) << "\" height=\"" << num(cell)
       << "\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>\n";
  os << "<text x=\"" << num(ml + nx * cell + 10) << "\" y=\"" << num(mt + 10)
     << "\" font-size=\"11\">max " << num(v_max) << "</text>\n";
  os << "<text x=\"" << num(ml + nx * cell + 10) << "\" y=\"" << num(mt + ny * cell)
     << "\" font-size=\"11\">min " << num(v_min) << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << content;
}

}  // namespace pimdp
