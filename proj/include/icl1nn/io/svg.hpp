#pragma once

// Self-contained SVG line charts (optional +-band, log x axis) and heatmaps.
// Every drawn series also carries its raw data in data-* attributes so the
// plot can be checked against its CSV.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "icl1nn/io/csv.hpp"

namespace icl1nn::io {

struct Series {
  std::string name;
  std::vector<double> x, y;
  std::vector<double> lo, hi;  // optional band, same length as x
  std::string color = "#1f77b4";
};

struct LineChart {
  std::string title, xlabel, ylabel;
  bool log_x = false;
  std::vector<Series> series;
  int width = 720, height = 440;
};

namespace detail {

inline std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else if (c == '"') o += "&quot;";
    else o += c;
  }
  return o;
}

inline std::string num_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ' ';
    s += fmt(v[i]);
  }
  return s;
}

inline std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace detail

inline std::string render_line_chart(const LineChart& c) {
  using detail::px;
  const double L = 70, R = 20, T = 40, B = 55;
  const double pw = c.width - L - R, ph = c.height - T - B;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  auto usable_x = [&](double x) { return std::isfinite(x) && (!c.log_x || x > 0); };
  for (const auto& s : c.series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable_x(s.x[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      for (double y : {s.y[i], s.lo.empty() ? s.y[i] : s.lo[i], s.hi.empty() ? s.y[i] : s.hi[i]})
        if (std::isfinite(y)) {
          ymin = std::min(ymin, y);
          ymax = std::max(ymax, y);
        }
    }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double pad = 0.05 * (ymax - ymin);
  const double y0 = ymin - pad, y1 = ymax + pad;
  auto fx = [&](double x) {
    const double t = c.log_x ? (std::log10(x) - std::log10(xmin)) / (std::log10(xmax) - std::log10(xmin))
                             : (x - xmin) / (xmax - xmin);
    return L + t * pw;
  };
  auto fy = [&](double y) { return T + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(c.width) + "\" height=\"" +
                  std::to_string(c.height) + "\" viewBox=\"0 0 " + std::to_string(c.width) + " " +
                  std::to_string(c.height) + "\" data-xmin=\"" + fmt(xmin) + "\" data-xmax=\"" + fmt(xmax) +
                  "\" data-ymin=\"" + fmt(y0) + "\" data-ymax=\"" + fmt(y1) + "\" data-log-x=\"" +
                  (c.log_x ? "1" : "0") + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + px(c.width / 2.0) + "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"15\">" + detail::esc(c.title) + "</text>\n";
  s += "<rect x=\"" + px(L) + "\" y=\"" + px(T) + "\" width=\"" + px(pw) + "\" height=\"" + px(ph) +
       "\" fill=\"none\" stroke=\"#333\"/>\n";
  // ticks
  for (int i = 0; i <= 5; ++i) {
    const double yv = y0 + (y1 - y0) * i / 5.0;
    s += "<text x=\"" + px(L - 6) + "\" y=\"" + px(fy(yv) + 4) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + detail::tick_label(yv) + "</text>\n";
    s += "<line x1=\"" + px(L) + "\" x2=\"" + px(L + pw) + "\" y1=\"" + px(fy(yv)) + "\" y2=\"" + px(fy(yv)) +
         "\" stroke=\"#ddd\"/>\n";
  }
  std::vector<double> xt;
  if (c.log_x) {
    for (double p = std::floor(std::log10(xmin)); p <= std::ceil(std::log10(xmax)); p += 1.0) {
      const double v = std::pow(10.0, p);
      if (v >= xmin && v <= xmax) xt.push_back(v);
    }
  } else {
    for (int i = 0; i <= 5; ++i) xt.push_back(xmin + (xmax - xmin) * i / 5.0);
  }
  for (double xv : xt)
    s += "<text x=\"" + px(fx(xv)) + "\" y=\"" + px(T + ph + 16) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + detail::tick_label(xv) +
         "</text>\n";
  s += "<text x=\"" + px(L + pw / 2) + "\" y=\"" + px(c.height - 12.0) +
       "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + detail::esc(c.xlabel) +
       "</text>\n";
  s += "<text x=\"16\" y=\"" + px(T + ph / 2) + "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"12\" transform=\"rotate(-90 16 " + px(T + ph / 2) + ")\">" + detail::esc(c.ylabel) +
       "</text>\n";

  for (std::size_t k = 0; k < c.series.size(); ++k) {
    const Series& sr = c.series[k];
    if (!sr.lo.empty() && sr.lo.size() == sr.x.size() && sr.hi.size() == sr.x.size()) {
      std::string pts;
      for (std::size_t i = 0; i < sr.x.size(); ++i)
        if (usable_x(sr.x[i])) pts += px(fx(sr.x[i])) + "," + px(fy(sr.hi[i])) + " ";
      for (std::size_t i = sr.x.size(); i-- > 0;)
        if (usable_x(sr.x[i])) pts += px(fx(sr.x[i])) + "," + px(fy(sr.lo[i])) + " ";
      s += "<polygon class=\"band\" data-series=\"" + detail::esc(sr.name) + "\" data-lo=\"" +
           detail::num_list(sr.lo) + "\" data-hi=\"" + detail::num_list(sr.hi) + "\" fill=\"" + sr.color +
           "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"" + pts + "\"/>\n";
    }
    std::string pts;
    for (std::size_t i = 0; i < sr.x.size(); ++i)
      if (usable_x(sr.x[i]) && std::isfinite(sr.y[i])) pts += px(fx(sr.x[i])) + "," + px(fy(sr.y[i])) + " ";
    s += "<polyline class=\"series\" data-series=\"" + detail::esc(sr.name) + "\" data-x=\"" +
         detail::num_list(sr.x) + "\" data-y=\"" + detail::num_list(sr.y) + "\" fill=\"none\" stroke=\"" +
         sr.color + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    const double ly = T + 14 + 16.0 * k;
    s += "<line x1=\"" + px(L + pw - 150) + "\" x2=\"" + px(L + pw - 130) + "\" y1=\"" + px(ly) + "\" y2=\"" +
         px(ly) + "\" stroke=\"" + sr.color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + px(L + pw - 125) + "\" y=\"" + px(ly + 4) +
         "\" font-family=\"sans-serif\" font-size=\"11\">" + detail::esc(sr.name) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

struct Heatmap {
  std::string title, xlabel, ylabel;
  std::vector<double> x, y;               // cell centers
  std::vector<std::vector<double>> z;     // z[iy][ix]
  int width = 640, height = 560;
};

/// Piecewise-linear viridis-like ramp.
inline std::string ramp(double t) {
  static const double stops[5][3] = {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0) * 4.0;
  const int i = std::min(3, static_cast<int>(t));
  const double f = t - i;
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(stops[i][0] + f * (stops[i + 1][0] - stops[i][0])),
                static_cast<int>(stops[i][1] + f * (stops[i + 1][1] - stops[i][1])),
                static_cast<int>(stops[i][2] + f * (stops[i + 1][2] - stops[i][2])));
  return buf;
}

inline std::string render_heatmap(const Heatmap& h) {
  using detail::px;
  const double L = 70, R = 90, T = 40, B = 55;
  const double pw = h.width - L - R, ph = h.height - T - B;
  double zmin = std::numeric_limits<double>::infinity(), zmax = -zmin;
  for (const auto& row : h.z)
    for (double v : row)
      if (std::isfinite(v)) zmin = std::min(zmin, v), zmax = std::max(zmax, v);
  if (!std::isfinite(zmin)) zmin = 0, zmax = 1;
  if (zmax == zmin) zmax = zmin + 1;
  const std::size_t nx = h.x.size(), ny = h.y.size();
  const double cw = pw / std::max<std::size_t>(nx, 1), ch = ph / std::max<std::size_t>(ny, 1);
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(h.width) + "\" height=\"" +
                  std::to_string(h.height) + "\" data-zmin=\"" + fmt(zmin) + "\" data-zmax=\"" + fmt(zmax) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + px(h.width / 2.0) + "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"15\">" + detail::esc(h.title) + "</text>\n";
  for (std::size_t iy = 0; iy < ny; ++iy)
    for (std::size_t ix = 0; ix < nx; ++ix) {
      const double v = h.z[iy][ix];
      // row 0 at the bottom
      s += "<rect class=\"cell\" x=\"" + px(L + ix * cw) + "\" y=\"" + px(T + (ny - 1 - iy) * ch) + "\" width=\"" +
           px(cw + 0.3) + "\" height=\"" + px(ch + 0.3) + "\" fill=\"" + ramp((v - zmin) / (zmax - zmin)) +
           "\" data-x=\"" + fmt(h.x[ix]) + "\" data-y=\"" + fmt(h.y[iy]) + "\" data-value=\"" + fmt(v) + "\"/>\n";
    }
  for (int i = 0; i <= 4; ++i) {
    const std::size_t ix = nx ? std::min(nx - 1, static_cast<std::size_t>(i * (nx - 1) / 4.0 + 0.5)) : 0;
    const std::size_t iy = ny ? std::min(ny - 1, static_cast<std::size_t>(i * (ny - 1) / 4.0 + 0.5)) : 0;
    if (nx)
      s += "<text x=\"" + px(L + (ix + 0.5) * cw) + "\" y=\"" + px(T + ph + 16) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + detail::tick_label(h.x[ix]) +
           "</text>\n";
    if (ny)
      s += "<text x=\"" + px(L - 6) + "\" y=\"" + px(T + (ny - 0.5 - iy) * ch + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + detail::tick_label(h.y[iy]) +
           "</text>\n";
  }
  s += "<text x=\"" + px(L + pw / 2) + "\" y=\"" + px(h.height - 12.0) +
       "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + detail::esc(h.xlabel) + "</text>\n";
  s += "<text x=\"16\" y=\"" + px(T + ph / 2) + "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"12\" transform=\"rotate(-90 16 " + px(T + ph / 2) + ")\">" + detail::esc(h.ylabel) + "</text>\n";
  // color bar
  const double bx = L + pw + 25;
  for (int i = 0; i < 50; ++i)
    s += "<rect x=\"" + px(bx) + "\" y=\"" + px(T + ph * (1.0 - (i + 1) / 50.0)) + "\" width=\"18\" height=\"" +
         px(ph / 50.0 + 0.3) + "\" fill=\"" + ramp(i / 49.0) + "\"/>\n";
  s += "<text x=\"" + px(bx + 22) + "\" y=\"" + px(T + 10) + "\" font-family=\"sans-serif\" font-size=\"11\">" +
       detail::tick_label(zmax) + "</text>\n";
  s += "<text x=\"" + px(bx + 22) + "\" y=\"" + px(T + ph) + "\" font-family=\"sans-serif\" font-size=\"11\">" +
       detail::tick_label(zmin) + "</text>\n";
  s += "</svg>\n";
  return s;
}

/// Numbers stored in a data-* attribute of the n-th element carrying it.
inline std::vector<double> svg_attribute_values(const std::string& svg, const std::string& attr, std::size_t nth = 0) {
  const std::string key = " " + attr + "=\"";
  std::size_t pos = 0;
  for (std::size_t k = 0;; ++k) {
    pos = svg.find(key, pos);
    if (pos == std::string::npos) return {};
    pos += key.size();
    if (k == nth) break;
  }
  const std::size_t end = svg.find('"', pos);
  std::vector<double> out;
  for (const auto& tok : split(svg.substr(pos, end - pos), ' '))
    if (!tok.empty()) out.push_back(parse_double(tok, attr));
  return out;
}

}  // namespace icl1nn::io
