#pragma once

// Delimited text tables and small SVG line charts for analysis output.

#include "semdir/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

namespace semdir {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row) {
    require(row.size() == header.size(), ErrorKind::invalid_argument, "row width does not match the header");
    rows.push_back(std::move(row));
  }

  std::string tsv() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "\t" : "") + cells[i];
      out += "\n";
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out;
  }

  /// Fixed-width text rendering for terminals and reports.
  std::string text() const {
    std::vector<std::size_t> width(header.size(), 0);
    for (std::size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
    for (const auto& r : rows)
      for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        out += cells[i];
        if (i + 1 < cells.size()) out += std::string(width[i] - cells[i].size() + 2, ' ');
      }
      out += "\n";
    };
    line(header);
    std::size_t total = 0;
    for (auto w : width) total += w + 2;
    out += std::string(total - 2, '-') + "\n";
    for (const auto& r : rows) line(r);
    return out;
  }
};

inline std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string general(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> spread;  // optional +- band
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;
  std::vector<Series> series;

  std::string svg(int width = 640, int height = 400) const {
    static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
    const double left = 70, right = 150, top = 40, bottom = 50;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    auto ty = [&](double v) { return log_y ? std::log10(std::max(v, 1e-300)) : v; };
    for (const auto& s : series)
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        const double sp = i < s.spread.size() ? s.spread[i] : 0.0;
        x0 = std::min(x0, s.x[i]);
        x1 = std::max(x1, s.x[i]);
        y0 = std::min(y0, ty(s.y[i] - sp));
        y1 = std::max(y1, ty(s.y[i] + sp));
      }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const double pw = width - left - right, ph = height - top - bottom;
    auto px = [&](double v) { return left + (v - x0) / (x1 - x0) * pw; };
    auto py = [&](double v) { return top + (1.0 - (ty(v) - y0) / (y1 - y0)) * ph; };
    auto num = [](double v) { return fixed(v, 2); };

    std::string o = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
                    std::to_string(height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o += "<text x=\"" + num(width / 2.0) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" + title + "</text>\n";
    o += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
         "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int k = 0; k <= 4; ++k) {
      const double xv = x0 + (x1 - x0) * k / 4.0;
      const double yv = y0 + (y1 - y0) * k / 4.0;
      const double ylabel = log_y ? std::pow(10.0, yv) : yv;
      o += "<text x=\"" + num(px(xv)) + "\" y=\"" + num(top + ph + 16) + "\" text-anchor=\"middle\">" + fixed(xv, 2) +
           "</text>\n";
      const double ypix = top + (1.0 - double(k) / 4.0) * ph;
      o += "<text x=\"" + num(left - 6) + "\" y=\"" + num(ypix + 4) + "\" text-anchor=\"end\">" +
           (log_y ? general(ylabel) : fixed(ylabel, 3)) + "</text>\n";
    }
    o += "<text x=\"" + num(left + pw / 2) + "\" y=\"" + num(height - 12.0) + "\" text-anchor=\"middle\">" + x_label +
         "</text>\n";
    o += "<text x=\"16\" y=\"" + num(top + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         num(top + ph / 2) + ")\">" + y_label + "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
      const auto& se = series[s];
      const std::string color = colors[s % 6];
      if (se.spread.size() == se.x.size() && !se.x.empty()) {
        std::string band;
        for (std::size_t i = 0; i < se.x.size(); ++i) band += num(px(se.x[i])) + "," + num(py(se.y[i] + se.spread[i])) + " ";
        for (std::size_t i = se.x.size(); i-- > 0;)
          band += num(px(se.x[i])) + "," + num(py(se.y[i] - se.spread[i])) + " ";
        o += "<polygon points=\"" + band + "\" fill=\"" + color + "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
      }
      std::string pts;
      for (std::size_t i = 0; i < se.x.size(); ++i) pts += num(px(se.x[i])) + "," + num(py(se.y[i])) + " ";
      o += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\"/>\n";
      const double ly = top + 14 + 18.0 * double(s);
      o += "<line x1=\"" + num(left + pw + 12) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(left + pw + 32) + "\" y2=\"" +
           num(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
      o += "<text x=\"" + num(left + pw + 38) + "\" y=\"" + num(ly + 4) + "\">" + se.name + "</text>\n";
    }
    o += "</svg>\n";
    return o;
  }
};

}  // namespace semdir
