#pragma once

// Minimal line plot rasteriser: framed axes with tick marks, one polyline
// (with point markers) per series, and a legend of colour swatches with
// labels in a built-in 3x5 pixel font.

#include <algorithm>
#include <array>
#include <cmath>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "eclad/errors.hpp"
#include "eclad/image_io.hpp"

namespace eclad::plot {

using Color = std::array<std::uint8_t, 3>;

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  Color color{31, 119, 180};
};

struct Options {
  std::size_t width = 640;
  std::size_t height = 400;
  std::size_t margin = 40;
};

inline const std::array<Color, 6> kPalette{{
    {31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}, {148, 103, 189}, {140, 86, 75}}};

namespace detail {

// 3x5 glyph rows, 3 low bits per row, MSB = leftmost column.
inline std::array<std::uint8_t, 5> glyph_rows(char ch) {
  switch (ch) {
    case '0': return {7, 5, 5, 5, 7};
    case '1': return {2, 6, 2, 2, 7};
    case '2': return {7, 1, 7, 4, 7};
    case '3': return {7, 1, 7, 1, 7};
    case '4': return {5, 5, 7, 1, 1};
    case '5': return {7, 4, 7, 1, 7};
    case '6': return {7, 4, 7, 5, 7};
    case '7': return {7, 1, 1, 1, 1};
    case '8': return {7, 5, 7, 5, 7};
    case '9': return {7, 5, 7, 1, 7};
    case 'a': return {2, 5, 7, 5, 5};
    case 'b': return {6, 5, 6, 5, 6};
    case 'c': return {7, 4, 4, 4, 7};
    case 'd': return {6, 5, 5, 5, 6};
    case 'e': return {7, 4, 6, 4, 7};
    case 'f': return {7, 4, 6, 4, 4};
    case 'g': return {7, 4, 5, 5, 7};
    case 'h': return {5, 5, 7, 5, 5};
    case 'i': return {7, 2, 2, 2, 7};
    case 'j': return {1, 1, 1, 5, 7};
    case 'k': return {5, 5, 6, 5, 5};
    case 'l': return {4, 4, 4, 4, 7};
    case 'm': return {5, 7, 7, 5, 5};
    case 'n': return {6, 5, 5, 5, 5};
    case 'o': return {7, 5, 5, 5, 7};
    case 'p': return {7, 5, 7, 4, 4};
    case 'q': return {7, 5, 5, 7, 1};
    case 'r': return {6, 5, 6, 5, 5};
    case 's': return {7, 4, 7, 1, 7};
    case 't': return {7, 2, 2, 2, 2};
    case 'u': return {5, 5, 5, 5, 7};
    case 'v': return {5, 5, 5, 5, 2};
    case 'w': return {5, 5, 7, 7, 5};
    case 'x': return {5, 5, 2, 5, 5};
    case 'y': return {5, 5, 2, 2, 2};
    case 'z': return {7, 1, 2, 4, 7};
    case '.': return {0, 0, 0, 0, 2};
    case '-': return {0, 0, 7, 0, 0};
    case '_': return {0, 0, 0, 0, 7};
    case '(': return {1, 2, 2, 2, 1};
    case ')': return {4, 2, 2, 2, 4};
    default: return {0, 0, 0, 0, 0};
  }
}

class Canvas {
 public:
  Canvas(std::size_t w, std::size_t h) : img_{h, w, 3, std::vector<std::uint8_t>(w * h * 3, 255)} {}

  void put(long x, long y, Color c) {
    if (x < 0 || y < 0 || x >= static_cast<long>(img_.width) || y >= static_cast<long>(img_.height)) return;
    const std::size_t o = (static_cast<std::size_t>(y) * img_.width + static_cast<std::size_t>(x)) * 3;
    img_.pixels[o] = c[0];
    img_.pixels[o + 1] = c[1];
    img_.pixels[o + 2] = c[2];
  }

  void line(double x0, double y0, double x1, double y1, Color c) {
    const double steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1.0});
    for (int i = 0; i <= static_cast<int>(steps); ++i) {
      const double t = i / steps;
      put(std::lround(x0 + t * (x1 - x0)), std::lround(y0 + t * (y1 - y0)), c);
    }
  }

  void rect(long x0, long y0, long x1, long y1, Color c) {
    for (long y = y0; y <= y1; ++y) {
      for (long x = x0; x <= x1; ++x) put(x, y, c);
    }
  }

  void text(long x, long y, const std::string& s, Color c, long scale = 2) {
    for (char raw : s) {
      const char ch = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
      const auto rows = glyph_rows(ch);
      for (long r = 0; r < 5; ++r) {
        for (long col = 0; col < 3; ++col) {
          if (rows[static_cast<std::size_t>(r)] & (4 >> col)) {
            rect(x + col * scale, y + r * scale, x + col * scale + scale - 1, y + r * scale + scale - 1, c);
          }
        }
      }
      x += 4 * scale;
    }
  }

  const Image8& image() const { return img_; }

 private:
  Image8 img_;
};

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

}  // namespace detail

inline Image8 render(const std::vector<Series>& series, const Options& opt = {}) {
  if (series.empty()) throw InvalidArgument("plot: no series");
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size() || s.x.empty()) throw InvalidArgument("plot: series '" + s.label + "' is malformed");
    for (double v : s.x) xmin = std::min(xmin, v), xmax = std::max(xmax, v);
    for (double v : s.y) ymin = std::min(ymin, v), ymax = std::max(ymax, v);
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;

  detail::Canvas cv(opt.width, opt.height);
  const double left = static_cast<double>(opt.margin) + 20.0;
  const double right = static_cast<double>(opt.width - opt.margin);
  const double top = static_cast<double>(opt.margin);
  const double bottom = static_cast<double>(opt.height - opt.margin);
  const auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (right - left); };
  const auto py = [&](double y) { return bottom - (y - ymin) / (ymax - ymin) * (bottom - top); };

  const Color axis{0, 0, 0};
  const Color grid{225, 225, 225};
  for (int i = 0; i <= 4; ++i) {
    const double fx = xmin + (xmax - xmin) * i / 4.0;
    const double fy = ymin + (ymax - ymin) * i / 4.0;
    cv.line(px(fx), top, px(fx), bottom, grid);
    cv.line(left, py(fy), right, py(fy), grid);
    cv.line(px(fx), bottom, px(fx), bottom + 4, axis);
    cv.line(left - 4, py(fy), left, py(fy), axis);
    cv.text(std::lround(px(fx)) - 8, std::lround(bottom) + 8, detail::tick_label(fx), axis);
    cv.text(2, std::lround(py(fy)) - 5, detail::tick_label(fy), axis);
  }
  cv.line(left, top, left, bottom, axis);
  cv.line(left, bottom, right, bottom, axis);
  cv.line(right, top, right, bottom, axis);
  cv.line(left, top, right, top, axis);

  for (const auto& s : series) {
    for (std::size_t i = 0; i + 1 < s.x.size(); ++i) cv.line(px(s.x[i]), py(s.y[i]), px(s.x[i + 1]), py(s.y[i + 1]), s.color);
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const long cx = std::lround(px(s.x[i]));
      const long cy = std::lround(py(s.y[i]));
      cv.rect(cx - 2, cy - 2, cx + 2, cy + 2, s.color);
    }
  }

  long ly = static_cast<long>(top) + 6;
  for (const auto& s : series) {
    const long lx = static_cast<long>(right) - 150;
    cv.rect(lx, ly, lx + 10, ly + 9, s.color);
    cv.text(lx + 16, ly, s.label, axis);
    ly += 16;
  }
  return cv.image();
}

inline void write(const std::filesystem::path& path, const std::vector<Series>& series, const Options& opt = {}) {
  write_png(path, render(series, opt));
}

}  // namespace eclad::plot
