#pragma once

// Embedded stroke glyphs. Each glyph is a set of polylines in a unit box
// (height 1, y pointing down, x in [0, aspect]); a pixel belongs to the glyph
// when its center lies within half a stroke width of any segment. No
// anti-aliasing, so rasterised masks are exact.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "eclad/errors.hpp"
#include "eclad/tensor.hpp"

namespace eclad::synth {

enum class Glyph { A, B, C, D, E, F, G, H, O, X, plus, star, slash, hash, blank, background };

inline constexpr std::array<std::pair<Glyph, std::string_view>, 16> kGlyphNames{{
    {Glyph::A, "A"},         {Glyph::B, "B"},         {Glyph::C, "C"},       {Glyph::D, "D"},
    {Glyph::E, "E"},         {Glyph::F, "F"},         {Glyph::G, "G"},       {Glyph::H, "H"},
    {Glyph::O, "O"},         {Glyph::X, "X"},         {Glyph::plus, "plus"}, {Glyph::star, "star"},
    {Glyph::slash, "slash"}, {Glyph::hash, "hash"},   {Glyph::blank, "blank"},
    {Glyph::background, "background"},
}};

inline std::string_view to_string(Glyph g) {
  for (const auto& [glyph, name] : kGlyphNames) {
    if (glyph == g) return name;
  }
  return "?";
}

inline Glyph parse_glyph(std::string_view name) {
  for (const auto& [glyph, n] : kGlyphNames) {
    if (n == name) return glyph;
  }
  throw InvalidArgument("unknown glyph '" + std::string(name) + "'");
}

struct Point {
  double x = 0.0;
  double y = 0.0;
};

using Polyline = std::vector<Point>;

struct GlyphShape {
  double aspect = 1.0;  // width / height
  std::vector<Polyline> strokes;
};

namespace detail {

inline Polyline arc(double cx, double cy, double rx, double ry, double from_deg, double to_deg,
                    int segments = 20) {
  Polyline p;
  for (int i = 0; i <= segments; ++i) {
    const double t = (from_deg + (to_deg - from_deg) * i / segments) * std::numbers::pi / 180.0;
    p.push_back({cx + rx * std::cos(t), cy - ry * std::sin(t)});
  }
  return p;
}

}  // namespace detail

/// Stroke outline for `g`; blank and background have no strokes.
inline GlyphShape glyph_shape(Glyph g) {
  using detail::arc;
  switch (g) {
    case Glyph::A:
      return {0.8, {{{0.0, 1.0}, {0.4, 0.0}, {0.8, 1.0}}, {{0.18, 0.62}, {0.62, 0.62}}}};
    case Glyph::B:
      return {0.72,
              {{{0.0, 0.0}, {0.0, 1.0}},
               {{0.0, 0.0}, {0.42, 0.0}, {0.58, 0.06}, {0.64, 0.25}, {0.58, 0.44}, {0.42, 0.5}, {0.0, 0.5}},
               {{0.0, 0.5}, {0.48, 0.5}, {0.65, 0.57}, {0.72, 0.75}, {0.65, 0.93}, {0.48, 1.0}, {0.0, 1.0}}}};
    case Glyph::C:
      return {0.8, {arc(0.4, 0.5, 0.4, 0.5, 45.0, 315.0)}};
    case Glyph::D:
      return {0.75, {{{0.0, 0.0}, {0.0, 1.0}}, arc(0.0, 0.5, 0.75, 0.5, 90.0, -90.0)}};
    case Glyph::E:
      return {0.65,
              {{{0.65, 0.0}, {0.0, 0.0}, {0.0, 1.0}, {0.65, 1.0}}, {{0.0, 0.5}, {0.5, 0.5}}}};
    case Glyph::F:
      return {0.6, {{{0.6, 0.0}, {0.0, 0.0}, {0.0, 1.0}}, {{0.0, 0.5}, {0.48, 0.5}}}};
    case Glyph::G: {
      auto bowl = arc(0.4, 0.5, 0.4, 0.5, 45.0, 345.0);
      return {0.8, {bowl, {{0.79, 0.6}, {0.79, 0.95}}, {{0.45, 0.6}, {0.79, 0.6}}}};
    }
    case Glyph::H:
      return {0.7, {{{0.0, 0.0}, {0.0, 1.0}}, {{0.7, 0.0}, {0.7, 1.0}}, {{0.0, 0.5}, {0.7, 0.5}}}};
    case Glyph::O:
      return {0.8, {arc(0.4, 0.5, 0.4, 0.5, 0.0, 360.0, 32)}};
    case Glyph::X:
      return {0.8, {{{0.0, 0.0}, {0.8, 1.0}}, {{0.8, 0.0}, {0.0, 1.0}}}};
    case Glyph::plus:
      return {1.0, {{{0.5, 0.0}, {0.5, 1.0}}, {{0.0, 0.5}, {1.0, 0.5}}}};
    case Glyph::star: {
      GlyphShape s{1.0, {}};
      for (double deg : {90.0, 30.0, -30.0}) {
        const double t = deg * std::numbers::pi / 180.0;
        s.strokes.push_back({{0.5 - 0.5 * std::cos(t), 0.5 + 0.5 * std::sin(t)},
                             {0.5 + 0.5 * std::cos(t), 0.5 - 0.5 * std::sin(t)}});
      }
      return s;
    }
    case Glyph::slash:
      return {0.55, {{{0.0, 1.0}, {0.55, 0.0}}}};
    case Glyph::hash:
      return {0.9,
              {{{0.3, 0.0}, {0.22, 1.0}},
               {{0.68, 0.0}, {0.6, 1.0}},
               {{0.0, 0.32}, {0.9, 0.32}},
               {{0.0, 0.68}, {0.9, 0.68}}}};
    case Glyph::blank:
    case Glyph::background:
      return {1.0, {}};
  }
  return {1.0, {}};
}

/// Stroke width as a fraction of glyph height.
inline constexpr double kStrokeWidth = 0.2;

struct Placement {
  double center_row = 0.0;
  double center_col = 0.0;
  double height_px = 0.0;
  double rotation_deg = 0.0;
};

namespace detail {

inline double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = p.x - (a.x + t * dx);
  const double ey = p.y - (a.y + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

}  // namespace detail

/// Half-extents (rows, cols) of the axis-aligned box enclosing the rotated glyph.
inline std::pair<double, double> glyph_half_extent(const GlyphShape& shape, const Placement& pl) {
  const double pad = kStrokeWidth / 2.0;
  const double hw = (shape.aspect / 2.0 + pad) * pl.height_px;
  const double hh = (0.5 + pad) * pl.height_px;
  const double t = pl.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::abs(std::cos(t));
  const double s = std::abs(std::sin(t));
  return {hh * c + hw * s, hw * c + hh * s};
}

/// Rasterises `shape` at `pl` into an (h, w) mask.
inline Mask2 rasterize(const GlyphShape& shape, const Placement& pl, std::size_t h, std::size_t w) {
  Mask2 mask(h, w);
  if (shape.strokes.empty()) return mask;
  const auto [ext_r, ext_c] = glyph_half_extent(shape, pl);
  const auto clamp_row = [h](double v) {
    return static_cast<std::ptrdiff_t>(std::clamp(v, 0.0, static_cast<double>(h)));
  };
  const auto clamp_col = [w](double v) {
    return static_cast<std::ptrdiff_t>(std::clamp(v, 0.0, static_cast<double>(w)));
  };
  const std::ptrdiff_t r0 = clamp_row(std::floor(pl.center_row - ext_r - 1.0));
  const std::ptrdiff_t r1 = clamp_row(std::ceil(pl.center_row + ext_r + 1.0));
  const std::ptrdiff_t c0 = clamp_col(std::floor(pl.center_col - ext_c - 1.0));
  const std::ptrdiff_t c1 = clamp_col(std::ceil(pl.center_col + ext_c + 1.0));

  const double t = -pl.rotation_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(t);
  const double sn = std::sin(t);
  const double half = kStrokeWidth / 2.0;
  for (std::ptrdiff_t r = r0; r < r1; ++r) {
    for (std::ptrdiff_t c = c0; c < c1; ++c) {
      const double dy = (static_cast<double>(r) + 0.5 - pl.center_row) / pl.height_px;
      const double dx = (static_cast<double>(c) + 0.5 - pl.center_col) / pl.height_px;
      const Point p{cs * dx - sn * dy + shape.aspect / 2.0, sn * dx + cs * dy + 0.5};
      bool inside = false;
      for (const auto& stroke : shape.strokes) {
        for (std::size_t i = 0; i + 1 < stroke.size() && !inside; ++i) {
          inside = detail::segment_distance(p, stroke[i], stroke[i + 1]) <= half;
        }
        if (inside) break;
      }
      if (inside) mask.set(static_cast<std::size_t>(r), static_cast<std::size_t>(c), true);
    }
  }
  return mask;
}

}  // namespace eclad::synth
