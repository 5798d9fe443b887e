#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "lmdet/error.hpp"
#include "lmdet/model.hpp"

namespace lmdet {

// Shortest round-trip decimal form; deterministic for a given double.
inline std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string fmt_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return std::string(buf);
}

using CsvRow = std::vector<std::string>;

inline void write_csv(const std::string& path, const CsvRow& header,
                      const std::vector<CsvRow>& rows) {
  std::ofstream f(path);
  if (!f) fail(ErrorClass::io, "cannot open for writing: " + path);
  const auto emit = [&](const CsvRow& r) {
    for (size_t i = 0; i < r.size(); ++i) f << (i ? "," : "") << r[i];
    f << "\n";
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  if (!f) fail(ErrorClass::io, "short write: " + path);
}

inline uint64_t file_digest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorClass::io, "cannot open: " + path);
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[4096];
  while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
    for (std::streamsize i = 0; i < f.gcount(); ++i) {
      h ^= static_cast<uint8_t>(buf[i]);
      h *= 0x100000001b3ull;
    }
    if (!f) break;
  }
  return h;
}

inline std::string file_digest_hex(const std::string& path) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(file_digest(path)));
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// SVG emission (hand-rolled; the outputs are small overlays and bar charts)
// ---------------------------------------------------------------------------

inline std::string svg_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
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

// Prediction/ground-truth overlay: ground truth in green, predictions in
// red, the residual drawn as a yellow segment between the pair.
inline void write_svg_overlay(const std::string& path, int width, int height,
                              const LandmarkSet& pred, const LandmarkSet* gt,
                              const std::string& title) {
  std::ofstream f(path);
  if (!f) fail(ErrorClass::io, "cannot open for writing: " + path);
  const int display_scale = 4;
  f << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width * display_scale
    << "\" height=\"" << height * display_scale << "\" viewBox=\"-0.5 -0.5 " << width << " "
    << height << "\">\n";
  f << "  <title>" << svg_escape(title) << "</title>\n";
  f << "  <rect x=\"-0.5\" y=\"-0.5\" width=\"" << width << "\" height=\"" << height
    << "\" fill=\"#181818\"/>\n";
  if (gt) {
    for (size_t j = 0; j < pred.size() && j < gt->size(); ++j) {
      if (!gt->visible[j]) continue;
      f << "  <line x1=\"" << fmt_double(pred.points[j].x) << "\" y1=\""
        << fmt_double(pred.points[j].y) << "\" x2=\"" << fmt_double(gt->points[j].x)
        << "\" y2=\"" << fmt_double(gt->points[j].y)
        << "\" stroke=\"#f1c40f\" stroke-width=\"0.4\"/>\n";
      f << "  <circle cx=\"" << fmt_double(gt->points[j].x) << "\" cy=\""
        << fmt_double(gt->points[j].y) << "\" r=\"1.2\" fill=\"none\" stroke=\"#2ecc71\""
        << " stroke-width=\"0.5\"/>\n";
    }
  }
  for (size_t j = 0; j < pred.size(); ++j) {
    f << "  <circle cx=\"" << fmt_double(pred.points[j].x) << "\" cy=\""
      << fmt_double(pred.points[j].y) << "\" r=\"0.9\" fill=\"#e74c3c\"/>\n";
    f << "  <text x=\"" << fmt_double(pred.points[j].x + 2.0) << "\" y=\""
      << fmt_double(pred.points[j].y - 2.0)
      << "\" font-size=\"4\" fill=\"#ecf0f1\">" << j << "</text>\n";
  }
  f << "</svg>\n";
  if (!f) fail(ErrorClass::io, "short write: " + path);
}

struct BarSeries {
  std::string name;
  std::string color;
  std::vector<double> values;
};

// Grouped bar chart used by decode-bench and bias-report.
inline void write_svg_bars(const std::string& path, const std::string& title,
                           const std::vector<std::string>& groups,
                           const std::vector<BarSeries>& series) {
  for (const auto& s : series)
    if (s.values.size() != groups.size())
      fail(ErrorClass::shape, "svg bars: series/group size mismatch");
  double vmax = 0.0;
  for (const auto& s : series)
    for (double v : s.values) vmax = std::max(vmax, v);
  if (vmax <= 0.0) vmax = 1.0;

  const double plot_w = 420.0, plot_h = 220.0, left = 60.0, top = 40.0, bottom = 40.0;
  const double width = left + plot_w + 20.0, height = top + plot_h + bottom;
  std::ofstream f(path);
  if (!f) fail(ErrorClass::io, "cannot open for writing: " + path);
  f << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\">\n";
  f << "  <title>" << svg_escape(title) << "</title>\n";
  f << "  <rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
    << "\" fill=\"#ffffff\"/>\n";
  f << "  <text x=\"" << left << "\" y=\"24\" font-size=\"14\">" << svg_escape(title)
    << "</text>\n";
  // axes
  f << "  <line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
    << top + plot_h << "\" stroke=\"#333\"/>\n";
  f << "  <line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w
    << "\" y2=\"" << top + plot_h << "\" stroke=\"#333\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double vy = top + plot_h - plot_h * tick / 4.0;
    f << "  <text x=\"4\" y=\"" << fmt_fixed(vy + 4, 1) << "\" font-size=\"10\">"
      << fmt_fixed(vmax * tick / 4.0, 3) << "</text>\n";
    f << "  <line x1=\"" << left - 4 << "\" y1=\"" << fmt_fixed(vy, 1) << "\" x2=\"" << left
      << "\" y2=\"" << fmt_fixed(vy, 1) << "\" stroke=\"#333\"/>\n";
  }
  const double group_w = plot_w / groups.size();
  const double bar_w = group_w * 0.8 / std::max<size_t>(1, series.size());
  for (size_t g = 0; g < groups.size(); ++g) {
    for (size_t s = 0; s < series.size(); ++s) {
      const double v = series[s].values[g];
      const double bh = plot_h * v / vmax;
      const double x = left + g * group_w + group_w * 0.1 + s * bar_w;
      f << "  <rect x=\"" << fmt_fixed(x, 2) << "\" y=\"" << fmt_fixed(top + plot_h - bh, 2)
        << "\" width=\"" << fmt_fixed(bar_w * 0.92, 2) << "\" height=\"" << fmt_fixed(bh, 2)
        << "\" fill=\"" << series[s].color << "\"/>\n";
    }
    f << "  <text x=\"" << fmt_fixed(left + g * group_w + group_w / 2 - 10, 1) << "\" y=\""
      << top + plot_h + 16 << "\" font-size=\"10\">" << svg_escape(groups[g]) << "</text>\n";
  }
  for (size_t s = 0; s < series.size(); ++s) {
    const double x = left + 10 + 110.0 * s;
    f << "  <rect x=\"" << x << "\" y=\"" << height - 18 << "\" width=\"10\" height=\"10\" fill=\""
      << series[s].color << "\"/>\n";
    f << "  <text x=\"" << x + 14 << "\" y=\"" << height - 9 << "\" font-size=\"10\">"
      << svg_escape(series[s].name) << "</text>\n";
  }
  f << "</svg>\n";
  if (!f) fail(ErrorClass::io, "short write: " + path);
}

}  // namespace lmdet
