#pragma once

// Minimal SVG emission: axis box with ticks, polylines, confidence-band
// polygons, an optional dashed reference line at y = 1 (the zero
// estimator), optional log-y. Output carries an attribution comment with
// the manifest hash, seed, and a hash of the source CSV.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace icl {

inline uint64_t fnv1a64_bytes(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
  std::vector<double> lo, hi;  // optional band
  std::string color = "#1f77b4";
};

struct PlotSpec {
  std::string title;
  std::string x_label = "in-context examples";
  std::string y_label = "normalized squared error";
  std::vector<PlotSeries> series;
  bool log_y = false;
  bool zero_estimator_line = true;  // dashed line at 1.0
  std::string attribution;          // manifest hash / seed / csv hash comment
  int width = 640, height = 440;
};

namespace detail {

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace detail

inline std::string render_svg(const PlotSpec& spec) {
  const double ml = 62, mr = 16, mt = 34, mb = 46;
  const double pw = spec.width - ml - mr, ph = spec.height - mt - mb;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  const double log_floor = 1e-8;
  auto ty = [&](double y) { return spec.log_y ? std::log10(std::max(y, log_floor)) : y; };
  for (const auto& s : spec.series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      const double lo = s.lo.size() == s.x.size() ? s.lo[i] : s.y[i];
      const double hi = s.hi.size() == s.x.size() ? s.hi[i] : s.y[i];
      ymin = std::min(ymin, ty(lo));
      ymax = std::max(ymax, ty(hi));
    }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
  }
  if (spec.zero_estimator_line) {
    ymin = std::min(ymin, ty(1.0));
    ymax = std::max(ymax, ty(1.0));
  }
  if (!spec.log_y) ymin = std::min(ymin, 0.0);
  if (ymax <= ymin) ymax = ymin + 1;
  const double ypad = 0.05 * (ymax - ymin);
  ymax += ypad;
  if (spec.log_y) ymin -= ypad;

  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return mt + (ymax - ty(y)) / (ymax - ymin) * ph; };

  std::string out;
  out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(spec.width) + "\" height=\"" +
         std::to_string(spec.height) + "\" viewBox=\"0 0 " + std::to_string(spec.width) + " " +
         std::to_string(spec.height) + "\">\n";
  if (!spec.attribution.empty()) out += "<!-- " + spec.attribution + " -->\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<rect x=\"" + detail::num(ml) + "\" y=\"" + detail::num(mt) + "\" width=\"" + detail::num(pw) +
         "\" height=\"" + detail::num(ph) + "\" fill=\"none\" stroke=\"#444\"/>\n";
  out += "<text x=\"" + detail::num(ml) + "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" + spec.title +
         "</text>\n";

  // x ticks
  const int xticks = 6;
  for (int i = 0; i <= xticks; ++i) {
    const double v = xmin + (xmax - xmin) * i / xticks;
    const double x = px(v);
    out += "<line x1=\"" + detail::num(x) + "\" y1=\"" + detail::num(mt + ph) + "\" x2=\"" + detail::num(x) +
           "\" y2=\"" + detail::num(mt + ph + 4) + "\" stroke=\"#444\"/>\n";
    out += "<text x=\"" + detail::num(x) + "\" y=\"" + detail::num(mt + ph + 17) +
           "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">" + detail::num(v) + "</text>\n";
  }
  out += "<text x=\"" + detail::num(ml + pw / 2) + "\" y=\"" + detail::num(static_cast<double>(spec.height) - 8) +
         "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" + spec.x_label + "</text>\n";
  // y ticks
  const int yticks = 5;
  for (int i = 0; i <= yticks; ++i) {
    const double t = ymin + (ymax - ymin) * i / yticks;
    const double v = spec.log_y ? std::pow(10.0, t) : t;
    const double y = mt + (ymax - t) / (ymax - ymin) * ph;
    out += "<line x1=\"" + detail::num(ml - 4) + "\" y1=\"" + detail::num(y) + "\" x2=\"" + detail::num(ml) +
           "\" y2=\"" + detail::num(y) + "\" stroke=\"#444\"/>\n";
    out += "<text x=\"" + detail::num(ml - 7) + "\" y=\"" + detail::num(y + 3) +
           "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">" + detail::num(v) + "</text>\n";
  }
  out += "<text x=\"14\" y=\"" + detail::num(mt + ph / 2) +
         "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
         detail::num(mt + ph / 2) + ")\">" + spec.y_label + "</text>\n";

  if (spec.zero_estimator_line) {
    const double y = py(1.0);
    out += "<line x1=\"" + detail::num(ml) + "\" y1=\"" + detail::num(y) + "\" x2=\"" + detail::num(ml + pw) +
           "\" y2=\"" + detail::num(y) + "\" stroke=\"#888\" stroke-dasharray=\"5,4\"/>\n";
  }

  double legend_y = mt + 14;
  for (const auto& s : spec.series) {
    if (s.lo.size() == s.x.size() && s.hi.size() == s.x.size() && !s.x.empty()) {
      std::string pts;
      for (size_t i = 0; i < s.x.size(); ++i)
        pts += detail::num(px(s.x[i])) + "," + detail::num(py(s.hi[i])) + " ";
      for (size_t i = s.x.size(); i-- > 0;)
        pts += detail::num(px(s.x[i])) + "," + detail::num(py(s.lo[i])) + " ";
      out += "<polygon points=\"" + pts + "\" fill=\"" + s.color + "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
    }
    std::string pts;
    for (size_t i = 0; i < s.x.size(); ++i) pts += detail::num(px(s.x[i])) + "," + detail::num(py(s.y[i])) + " ";
    out += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.6\"/>\n";
    out += "<line x1=\"" + detail::num(ml + pw - 150) + "\" y1=\"" + detail::num(legend_y) + "\" x2=\"" +
           detail::num(ml + pw - 132) + "\" y2=\"" + detail::num(legend_y) + "\" stroke=\"" + s.color +
           "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + detail::num(ml + pw - 127) + "\" y=\"" + detail::num(legend_y + 3) +
           "\" font-family=\"sans-serif\" font-size=\"10\">" + s.label + "</text>\n";
    legend_y += 14;
  }
  out += "</svg>\n";
  return out;
}

}  // namespace icl
