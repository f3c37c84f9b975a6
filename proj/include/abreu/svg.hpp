#pragma once

// Minimal SVG line/scatter plots.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "abreu/io.hpp"

namespace abreu {

struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
  bool line = true;
  bool markers = true;
};

struct PlotSpec {
  std::string title;
  std::string xlabel, ylabel;
  bool logx = false, logy = false;
  std::vector<PlotSeries> series;
  /// shade the region between series 0 and 1 (same x)
  bool band = false;
  std::vector<std::string> notes;
};

namespace detail {

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double x, const char* f = "%.2f") {
  char b[48];
  std::snprintf(b, sizeof b, f, x);
  return b;
}

struct Axis {
  double lo = 0, hi = 1;
  bool log = false;
  double map(double v) const {
    const double t = log ? std::log10(v) : v;
    return (t - lo) / (hi - lo);
  }
  std::vector<double> ticks() const {
    std::vector<double> t;
    if (log) {
      for (double e = std::floor(lo); e <= std::ceil(hi) + 1e-9; e += 1)
        if (e >= lo - 1e-9 && e <= hi + 1e-9) t.push_back(std::pow(10.0, e));
      if (t.size() < 2) {
        t.clear();
        for (int i = 0; i <= 4; ++i) t.push_back(std::pow(10.0, lo + (hi - lo) * i / 4));
      }
      return t;
    }
    for (int i = 0; i <= 5; ++i) t.push_back(lo + (hi - lo) * i / 5);
    return t;
  }
};

inline Axis make_axis(const std::vector<const std::vector<double>*>& data, bool log) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* v : data)
    for (double x : *v) {
      if (!std::isfinite(x) || (log && x <= 0)) continue;
      const double t = log ? std::log10(x) : x;
      lo = std::min(lo, t);
      hi = std::max(hi, t);
    }
  if (!std::isfinite(lo)) lo = 0, hi = 1;
  if (hi - lo < 1e-12) {
    const double pad = log ? 0.5 : std::max(0.5 * std::abs(lo), 0.5);
    lo -= pad;
    hi += pad;
  } else {
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
  return {lo, hi, log};
}

} // namespace detail

inline void write_svg(const std::filesystem::path& path, const PlotSpec& spec, const std::string& hash) {
  const double W = 640, H = 440, L = 80, R = 20, T = 40, B = 60;
  const double pw = W - L - R, ph = H - T - B;
  std::vector<const std::vector<double>*> xs, ys;
  for (const auto& s : spec.series) {
    xs.push_back(&s.x);
    ys.push_back(&s.y);
  }
  const detail::Axis ax = detail::make_axis(xs, spec.logx), ay = detail::make_axis(ys, spec.logy);
  auto px = [&](double v) { return L + pw * ax.map(v); };
  auto py = [&](double v) { return T + ph * (1 - ay.map(v)); };
  auto usable = [&](double x, double y) {
    return std::isfinite(x) && std::isfinite(y) && (!spec.logx || x > 0) && (!spec.logy || y > 0);
  };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::ofstream out(path, std::ios::binary);
  if (!out) throw OutputError("cannot open " + path.string() + " for writing");
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<!-- config_hash=" << hash << " -->\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << detail::svg_escape(spec.title) << "</text>\n";
  out << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"black\"/>\n";

  for (double t : ax.ticks()) {
    const double x = px(t);
    out << "<line x1=\"" << detail::num(x) << "\" y1=\"" << T + ph << "\" x2=\"" << detail::num(x) << "\" y2=\"" << T + ph + 5 << "\" stroke=\"black\"/>";
    out << "<text x=\"" << detail::num(x) << "\" y=\"" << T + ph + 18 << "\" text-anchor=\"middle\">" << detail::num(t, "%.3g") << "</text>\n";
  }
  for (double t : ay.ticks()) {
    const double y = py(t);
    out << "<line x1=\"" << L - 5 << "\" y1=\"" << detail::num(y) << "\" x2=\"" << L << "\" y2=\"" << detail::num(y) << "\" stroke=\"black\"/>";
    out << "<text x=\"" << L - 8 << "\" y=\"" << detail::num(y + 4) << "\" text-anchor=\"end\">" << detail::num(t, "%.3g") << "</text>\n";
  }
  out << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">" << detail::svg_escape(spec.xlabel) << "</text>\n";
  out << "<text transform=\"translate(18," << T + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << detail::svg_escape(spec.ylabel) << "</text>\n";

  if (spec.band && spec.series.size() >= 2) {
    const auto& a = spec.series[0];
    const auto& b = spec.series[1];
    std::string pts;
    for (std::size_t i = 0; i < a.x.size(); ++i)
      if (usable(a.x[i], a.y[i])) pts += detail::num(px(a.x[i])) + "," + detail::num(py(a.y[i])) + " ";
    for (std::size_t i = b.x.size(); i-- > 0;)
      if (usable(b.x[i], b.y[i])) pts += detail::num(px(b.x[i])) + "," + detail::num(py(b.y[i])) + " ";
    out << "<polygon points=\"" << pts << "\" fill=\"#1f77b4\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
  }

  for (std::size_t s = 0; s < spec.series.size(); ++s) {
    const auto& S = spec.series[s];
    const char* c = colors[s % 6];
    std::string pts;
    for (std::size_t i = 0; i < S.x.size() && i < S.y.size(); ++i)
      if (usable(S.x[i], S.y[i])) pts += detail::num(px(S.x[i])) + "," + detail::num(py(S.y[i])) + " ";
    if (S.line && !pts.empty())
      out << "<polyline points=\"" << pts << "\" fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\"/>\n";
    if (S.markers)
      for (std::size_t i = 0; i < S.x.size() && i < S.y.size(); ++i)
        if (usable(S.x[i], S.y[i]))
          out << "<circle cx=\"" << detail::num(px(S.x[i])) << "\" cy=\"" << detail::num(py(S.y[i])) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
    const double ly = T + 14 + 16 * s;
    out << "<line x1=\"" << L + pw - 150 << "\" y1=\"" << ly << "\" x2=\"" << L + pw - 130 << "\" y2=\"" << ly << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>";
    out << "<text x=\"" << L + pw - 125 << "\" y=\"" << ly + 4 << "\">" << detail::svg_escape(S.label) << "</text>\n";
  }
  for (std::size_t i = 0; i < spec.notes.size(); ++i)
    out << "<text x=\"" << L + 10 << "\" y=\"" << T + ph - 10 - 16 * (spec.notes.size() - 1 - i) << "\">" << detail::svg_escape(spec.notes[i]) << "</text>\n";
  out << "</svg>\n";
}

} // namespace abreu
