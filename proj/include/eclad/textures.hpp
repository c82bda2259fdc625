#pragma once

// Procedural fills standing in for photographic textures. A fill is a pure
// function of (row, col, phase): rendering and later verification evaluate
// the same function and agree bit for bit.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "eclad/errors.hpp"
#include "eclad/rng.hpp"

namespace eclad::synth {

enum class Texture { solid, cork, aluminum_foil, cotton, orange_peel, sponge };

using Rgb8 = std::array<std::uint8_t, 3>;

struct Fill {
  Texture texture = Texture::solid;
  Rgb8 color{128, 128, 128};  // solid color, or base tint for textures

  friend bool operator==(const Fill&, const Fill&) = default;
};

/// Per-image texture offset so every image shows a different patch.
struct TexturePhase {
  std::uint32_t dx = 0;
  std::uint32_t dy = 0;
  std::uint64_t salt = 0;
};

inline std::string_view to_string(Texture t) {
  switch (t) {
    case Texture::solid: return "solid";
    case Texture::cork: return "cork";
    case Texture::aluminum_foil: return "aluminum_foil";
    case Texture::cotton: return "cotton";
    case Texture::orange_peel: return "orange_peel";
    case Texture::sponge: return "sponge";
  }
  return "solid";
}

inline Texture parse_texture(std::string_view name) {
  for (Texture t : {Texture::solid, Texture::cork, Texture::aluminum_foil, Texture::cotton,
                    Texture::orange_peel, Texture::sponge}) {
    if (to_string(t) == name) return t;
  }
  throw InvalidArgument("unknown texture '" + std::string(name) + "'");
}

inline Fill solid(std::uint8_t r, std::uint8_t g, std::uint8_t b) { return {Texture::solid, {r, g, b}}; }
inline Fill textured(Texture t) {
  switch (t) {
    case Texture::cork: return {t, {112, 80, 56}};
    case Texture::aluminum_foil: return {t, {172, 176, 184}};
    case Texture::cotton: return {t, {226, 222, 206}};
    case Texture::orange_peel: return {t, {236, 138, 36}};
    case Texture::sponge: return {t, {226, 198, 96}};
    case Texture::solid: break;
  }
  return solid(128, 128, 128);
}

namespace detail {

inline double lattice(std::int64_t x, std::int64_t y, std::uint64_t salt) {
  const std::uint64_t h = mix_seed(salt, static_cast<std::uint64_t>(x), static_cast<std::uint64_t>(y));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

// Value noise with lattice spacing `cell` pixels, range [0, 1).
inline double value_noise(double x, double y, double cell, std::uint64_t salt) {
  const double fx = x / cell;
  const double fy = y / cell;
  const auto ix = static_cast<std::int64_t>(std::floor(fx));
  const auto iy = static_cast<std::int64_t>(std::floor(fy));
  const double tx = smooth(fx - static_cast<double>(ix));
  const double ty = smooth(fy - static_cast<double>(iy));
  const double a = lattice(ix, iy, salt);
  const double b = lattice(ix + 1, iy, salt);
  const double c = lattice(ix, iy + 1, salt);
  const double d = lattice(ix + 1, iy + 1, salt);
  return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
}

// Distance to the nearest jittered feature point, in cell units.
inline double cellular(double x, double y, double cell, std::uint64_t salt) {
  const double fx = x / cell;
  const double fy = y / cell;
  const auto ix = static_cast<std::int64_t>(std::floor(fx));
  const auto iy = static_cast<std::int64_t>(std::floor(fy));
  double best = 1e9;
  for (std::int64_t oy = -1; oy <= 1; ++oy) {
    for (std::int64_t ox = -1; ox <= 1; ++ox) {
      const double px = static_cast<double>(ix + ox) + lattice(ix + ox, iy + oy, salt);
      const double py = static_cast<double>(iy + oy) + lattice(ix + ox, iy + oy, salt ^ 0x5bd1e995u);
      best = std::min(best, std::hypot(fx - px, fy - py));
    }
  }
  return best;
}

inline Rgb8 scale_color(const Rgb8& base, double k) {
  Rgb8 out{};
  for (std::size_t i = 0; i < 3; ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(base[i] * k, 0.0, 255.0)));
  }
  return out;
}

}  // namespace detail

/// Color of `fill` at pixel (row, col) for the given per-image phase.
inline Rgb8 evaluate(const Fill& fill, std::size_t row, std::size_t col, const TexturePhase& phase) {
  using namespace detail;
  const double x = static_cast<double>(col) + static_cast<double>(phase.dx);
  const double y = static_cast<double>(row) + static_cast<double>(phase.dy);
  const auto ix = static_cast<std::int64_t>(col) + phase.dx;
  const auto iy = static_cast<std::int64_t>(row) + phase.dy;
  const std::uint64_t salt = phase.salt;
  switch (fill.texture) {
    case Texture::solid:
      return fill.color;
    case Texture::cork: {
      const double n = 0.6 * value_noise(x, y, 5.0, salt) + 0.4 * value_noise(x, y, 2.0, salt + 1);
      const double pore = lattice(ix, iy, salt + 2) < 0.07 ? 0.55 : 1.0;
      return scale_color(fill.color, (0.65 + 0.55 * n) * pore);
    }
    case Texture::aluminum_foil: {
      const double speck = lattice(ix, iy, salt);
      const double crinkle = value_noise(x, y, 3.0, salt + 1);
      return scale_color(fill.color, 0.55 + 0.45 * speck * speck + 0.35 * crinkle);
    }
    case Texture::cotton: {
      const double warp = 2.0 * value_noise(x, y, 4.0, salt);
      const double stripe = 0.5 + 0.5 * std::sin((x + y) * 1.3 + warp);
      const double fiber = lattice(ix, iy, salt + 1);
      return scale_color(fill.color, 0.72 + 0.2 * stripe + 0.08 * fiber);
    }
    case Texture::orange_peel: {
      const double bump = value_noise(x, y, 2.5, salt);
      const double dimple = lattice(ix, iy, salt + 1) < 0.1 ? 0.8 : 1.0;
      return scale_color(fill.color, (0.78 + 0.3 * bump) * dimple);
    }
    case Texture::sponge: {
      const double d = cellular(x, y, 6.0, salt);
      const double hole = d < 0.3 ? 0.45 + d : 1.0;
      return scale_color(fill.color, hole * (0.9 + 0.15 * value_noise(x, y, 3.0, salt + 1)));
    }
  }
  return fill.color;
}

}  // namespace eclad::synth
