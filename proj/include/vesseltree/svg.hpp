#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vesseltree/util.hpp"

namespace vtree {

struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
};

/// Self-contained SVG line chart. The exact data table is embedded as an XML
/// comment so every chart carries its own numbers.
inline void write_svg_chart(const std::string& path, const std::string& title,
                            const std::string& x_label, const std::string& y_label,
                            const std::vector<PlotSeries>& series) {
  const double W = 640, H = 440, ml = 70, mr = 20, mt = 40, mb = 55;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool any = false;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!any) {
        xmin = xmax = s.x[i];
        ymin = ymax = s.y[i];
        any = true;
      }
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (xmax - xmin < 1e-12) xmax = xmin + 1;
  if (ymax - ymin < 1e-12) ymax = ymin + 1;
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
  auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  f << "<!-- data table\n";
  for (const auto& s : series) {
    f << "series: " << s.label << "\n";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      f << fmt_double(s.x[i]) << "," << fmt_double(s.y[i]) << "\n";
  }
  f << "-->\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  f << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title
    << "</text>\n";
  // axes
  f << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\"" << H - mb
    << "\" stroke=\"black\"/>\n";
  f << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
    << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    double xv = xmin + (xmax - xmin) * t / 5.0;
    double yv = ymin + (ymax - ymin) * t / 5.0;
    char bx[32], by[32];
    std::snprintf(bx, sizeof(bx), "%.3g", xv);
    std::snprintf(by, sizeof(by), "%.3g", yv);
    f << "<line x1=\"" << px(xv) << "\" y1=\"" << H - mb << "\" x2=\"" << px(xv) << "\" y2=\""
      << H - mb + 5 << "\" stroke=\"black\"/>\n";
    f << "<text x=\"" << px(xv) << "\" y=\"" << H - mb + 20
      << "\" text-anchor=\"middle\" font-size=\"11\">" << bx << "</text>\n";
    f << "<line x1=\"" << ml - 5 << "\" y1=\"" << py(yv) << "\" x2=\"" << ml << "\" y2=\""
      << py(yv) << "\" stroke=\"black\"/>\n";
    f << "<text x=\"" << ml - 8 << "\" y=\"" << py(yv) + 4
      << "\" text-anchor=\"end\" font-size=\"11\">" << by << "</text>\n";
  }
  f << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 12
    << "\" text-anchor=\"middle\" font-size=\"13\">" << x_label << "</text>\n";
  f << "<text x=\"18\" y=\"" << (mt + H - mb) / 2
    << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
    << (mt + H - mb) / 2 << ")\">" << y_label << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = colors[s % 6];
    f << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size(); ++i)
      f << px(series[s].x[i]) << "," << py(series[s].y[i]) << " ";
    f << "\"/>\n";
    for (std::size_t i = 0; i < series[s].x.size(); ++i)
      f << "<circle cx=\"" << px(series[s].x[i]) << "\" cy=\"" << py(series[s].y[i])
        << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
    f << "<rect x=\"" << W - mr - 160 << "\" y=\"" << mt + 18 * s << "\" width=\"12\" height=\"4\""
      << " fill=\"" << color << "\"/>\n";
    f << "<text x=\"" << W - mr - 142 << "\" y=\"" << mt + 18 * s + 6 << "\" font-size=\"12\">"
      << series[s].label << "</text>\n";
  }
  f << "</svg>\n";
}

}  // namespace vtree
