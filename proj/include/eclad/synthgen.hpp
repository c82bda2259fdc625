#pragma once

// Synthetic classification datasets built from textured glyph primitives,
// each image carrying one exact ground-truth mask per primitive.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "eclad/errors.hpp"
#include "eclad/glyphs.hpp"
#include "eclad/image_io.hpp"
#include "eclad/rng.hpp"
#include "eclad/tensor.hpp"
#include "eclad/textures.hpp"

namespace eclad::synth {

/// Frame size the glyph heights below are expressed in.
inline constexpr double kReferenceSize = 224.0;
inline constexpr int kPlacementRetries = 100;
inline constexpr double kMaxRotationDeg = 15.0;

struct PrimitiveSpec {
  std::string id;
  std::vector<Glyph> glyphs;       // one is drawn per image; Glyph::blank means absent
  std::vector<Fill> fills;         // one per class, or a single shared fill
  double size_px = 80.0;           // glyph height at the reference frame size
  bool full_frame = false;         // background
  bool important = false;
  std::vector<double> appearance;  // per-class probability of appearing

  const Fill& fill_for(std::size_t class_idx) const {
    return fills.size() == 1 ? fills.front() : fills.at(class_idx);
  }
};

struct DatasetSpec {
  std::string name;
  std::vector<std::string> classes;
  std::vector<PrimitiveSpec> primitives;
  std::size_t image_size = 224;
  std::size_t per_class_count = 200;

  std::size_t background_index() const {
    for (std::size_t i = 0; i < primitives.size(); ++i) {
      if (primitives[i].full_frame) return i;
    }
    throw InvalidArgument("dataset spec " + name + " has no background primitive");
  }
};

/// Checks the structural rules every spec must satisfy.
inline void check_spec(const DatasetSpec& spec) {
  if (spec.classes.size() < 2) throw InvalidArgument(spec.name + ": need at least two classes");
  if (spec.primitives.empty()) throw InvalidArgument(spec.name + ": no primitives");
  if (spec.image_size < 8) throw InvalidArgument(spec.name + ": image size too small");
  const auto n_bg = std::count_if(spec.primitives.begin(), spec.primitives.end(),
                                  [](const PrimitiveSpec& p) { return p.full_frame; });
  if (n_bg != 1) throw InvalidArgument(spec.name + ": exactly one full-frame primitive required");
  for (const auto& p : spec.primitives) {
    if (p.appearance.size() != spec.classes.size()) {
      throw InvalidArgument(spec.name + "/" + p.id + ": appearance must list every class");
    }
    if (p.fills.size() != 1 && p.fills.size() != spec.classes.size()) {
      throw InvalidArgument(spec.name + "/" + p.id + ": need one fill or one per class");
    }
    if (!p.full_frame && p.glyphs.empty()) throw InvalidArgument(spec.name + "/" + p.id + ": no glyphs");
    if (!p.important && !p.full_frame &&
        std::adjacent_find(p.appearance.begin(), p.appearance.end(), std::not_equal_to<>()) !=
            p.appearance.end()) {
      throw InvalidArgument(spec.name + "/" + p.id + ": unimportant primitive must be balanced");
    }
  }
  for (std::size_t k = 0; k < spec.classes.size(); ++k) {
    const bool ok = std::any_of(spec.primitives.begin(), spec.primitives.end(), [k](const auto& p) {
      return p.important && p.appearance[k] == 1.0;
    });
    if (!ok) throw InvalidArgument(spec.name + ": class " + spec.classes[k] + " has no sure important primitive");
  }
}

namespace colors {
inline const Fill green = solid(40, 170, 60);
inline const Fill blue = solid(40, 70, 200);
inline const Fill gray = solid(128, 128, 128);
inline const Fill red = solid(200, 40, 40);
inline const Fill yellow = solid(230, 210, 40);
inline const Fill magenta = solid(190, 60, 190);
inline const Fill cyan = solid(40, 190, 200);
inline const Fill brown = solid(120, 66, 24);
}  // namespace colors

/// The six built-in recipes (AB, ABplus, BigSmall, CO, colorGB, isA).
inline std::vector<DatasetSpec> builtin_specs() {
  using G = Glyph;
  const auto both = std::vector<double>{1.0, 1.0};
  const auto only0 = std::vector<double>{1.0, 0.0};
  const auto only1 = std::vector<double>{0.0, 1.0};
  const auto half = std::vector<double>{0.5, 0.5};
  auto bg = [&](const std::string& id, Fill f) {
    return PrimitiveSpec{id, {G::background}, {f}, kReferenceSize, true, false, both};
  };
  std::vector<DatasetSpec> specs;

  specs.push_back({"AB",
                   {"A", "B"},
                   {{"p1", {G::A}, {textured(Texture::cork)}, 90, false, true, only0},
                    {"p2", {G::B}, {colors::green}, 90, false, true, only1},
                    {"p3", {G::plus}, {textured(Texture::cotton)}, 60, false, false, both},
                    bg("p4", textured(Texture::orange_peel))}});

  specs.push_back({"ABplus",
                   {"A", "B"},
                   {{"p1", {G::A}, {textured(Texture::aluminum_foil)}, 80, false, true, only0},
                    {"p2", {G::B}, {colors::green}, 80, false, true, only1},
                    {"p3", {G::star}, {colors::red}, 44, false, false, half},
                    {"p4", {G::slash}, {colors::yellow}, 44, false, false, half},
                    {"p5", {G::hash}, {colors::magenta}, 44, false, false, half},
                    {"p6", {G::X}, {colors::cyan}, 44, false, false, half},
                    {"p7", {G::plus}, {colors::brown}, 44, false, false, half},
                    bg("p8", textured(Texture::sponge))}});

  specs.push_back({"BigSmall",
                   {"big", "small"},
                   {{"p1", {G::B}, {colors::blue}, 100, false, true, only0},
                    {"p2", {G::B}, {colors::blue}, 40, false, true, only1},
                    {"p3", {G::plus}, {textured(Texture::cotton)}, 60, false, false, both},
                    bg("p4", textured(Texture::cork))}});

  specs.push_back({"CO",
                   {"C", "O"},
                   {{"p1", {G::C}, {textured(Texture::aluminum_foil)}, 90, false, true, only0},
                    {"p2", {G::O}, {textured(Texture::aluminum_foil)}, 90, false, true, only1},
                    {"p3", {G::plus}, {textured(Texture::cotton)}, 60, false, false, both},
                    bg("p4", textured(Texture::cork))}});

  specs.push_back({"colorGB",
                   {"B", "G"},
                   {{"p1", {G::A, G::B}, {colors::blue, colors::green}, 90, false, true, both},
                    {"p2", {G::C, G::D, G::blank}, {colors::green}, 70, false, false, both},
                    {"p3", {G::plus}, {textured(Texture::cotton)}, 50, false, false, both},
                    bg("p4", textured(Texture::orange_peel))}});

  specs.push_back({"isA",
                   {"isA", "notA"},
                   {{"p1", {G::A}, {colors::blue}, 100, false, true, only0},
                    {"p2", {G::B, G::C, G::D, G::E, G::F, G::G, G::H}, {colors::blue}, 100, false, true, only1},
                    bg("p3", colors::gray)}});
  return specs;
}

inline DatasetSpec builtin_spec(std::string_view name) {
  for (auto& s : builtin_specs()) {
    if (s.name == name) return s;
  }
  throw InvalidArgument("unknown dataset '" + std::string(name) + "' (expected AB, ABplus, BigSmall, CO, colorGB, isA)");
}

/// Identifies one image of a generated dataset; the image's randomness is a
/// pure function of this key.
struct ImageKey {
  std::uint64_t seed = 0;
  std::size_t index = 0;  // position within its class
};

struct PlacedPrimitive {
  std::string id;
  Glyph glyph = Glyph::blank;
  Fill fill;
  TexturePhase phase;
  std::optional<Placement> placement;  // empty for background and absent glyphs
};

struct ImageRecord {
  Tensor3 image;  // (h, w, 3), values k/255
  std::size_t label = 0;
  std::vector<std::pair<std::string, Mask2>> masks;  // spec primitive order
  std::vector<PlacedPrimitive> layers;               // spec primitive order

  const Mask2& mask(std::string_view id) const {
    for (const auto& [pid, m] : masks) {
      if (pid == id) return m;
    }
    throw InvalidArgument("no mask for primitive '" + std::string(id) + "'");
  }
};

namespace detail {

// Low-discrepancy schedule shared by all classes, so unimportant primitives
// appear with the same frequency (to within one image) in every class.
inline double balanced_draw(std::uint64_t seed, std::size_t primitive, std::size_t index) {
  const double offset = static_cast<double>(mix_seed(seed, 0xba1a4ceULL, primitive) >> 11) * 0x1.0p-53;
  const double v = offset + static_cast<double>(index) * (std::numbers::phi - 1.0);
  return v - std::floor(v);
}

}  // namespace detail

/// Composes one image of class `class_idx`.
inline ImageRecord render_image(const DatasetSpec& spec, std::size_t class_idx, const ImageKey& key) {
  if (class_idx >= spec.classes.size()) {
    throw InvalidArgument("class index " + std::to_string(class_idx) + " out of range for " + spec.name);
  }
  const std::size_t n = spec.image_size;
  const double scale = static_cast<double>(n) / kReferenceSize;
  const std::size_t bg = spec.background_index();
  Rng rng(mix_seed(key.seed, class_idx, key.index));

  std::vector<std::size_t> owner(n * n, bg);
  ImageRecord rec;
  rec.label = class_idx;
  rec.layers.resize(spec.primitives.size());

  auto draw_phase = [&rng] {
    TexturePhase ph;
    ph.dx = static_cast<std::uint32_t>(rng.below(1u << 16));
    ph.dy = static_cast<std::uint32_t>(rng.below(1u << 16));
    ph.salt = rng.next();
    return ph;
  };

  rec.layers[bg] = {spec.primitives[bg].id, Glyph::background, spec.primitives[bg].fill_for(class_idx),
                    draw_phase(), std::nullopt};

  for (std::size_t pi = 0; pi < spec.primitives.size(); ++pi) {
    if (pi == bg) continue;
    const auto& prim = spec.primitives[pi];
    PlacedPrimitive& layer = rec.layers[pi];
    layer.id = prim.id;
    layer.fill = prim.fill_for(class_idx);
    layer.phase = draw_phase();

    const double q = prim.appearance[class_idx];
    Glyph glyph = Glyph::blank;
    if (prim.important) {
      const bool appears = q >= 1.0 || (q > 0.0 && rng.uniform() < q);
      if (appears) glyph = prim.glyphs[rng.below(prim.glyphs.size())];
    } else {
      const double u = detail::balanced_draw(key.seed, pi, key.index);
      if (u < q) {
        const auto choice = static_cast<std::size_t>(u / q * static_cast<double>(prim.glyphs.size()));
        glyph = prim.glyphs[std::min(choice, prim.glyphs.size() - 1)];
      }
    }
    layer.glyph = glyph;
    if (glyph == Glyph::blank) continue;

    const GlyphShape shape = glyph_shape(glyph);
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
      Placement pl;
      pl.height_px = prim.size_px * scale;
      pl.rotation_deg = rng.uniform(-kMaxRotationDeg, kMaxRotationDeg);
      const auto [ext_r, ext_c] = glyph_half_extent(shape, pl);
      const double size = static_cast<double>(n);
      if (2.0 * ext_r >= size || 2.0 * ext_c >= size) break;
      pl.center_row = rng.uniform(ext_r, size - ext_r);
      pl.center_col = rng.uniform(ext_c, size - ext_c);
      const Mask2 m = rasterize(shape, pl, n, n);

      // Reject contact with an already placed glyph (one pixel of clearance).
      bool clash = false;
      for (std::size_t r = 0; r < n && !clash; ++r) {
        for (std::size_t c = 0; c < n && !clash; ++c) {
          if (!m(r, c)) continue;
          for (std::size_t rr = r > 0 ? r - 1 : 0; rr <= std::min(r + 1, n - 1) && !clash; ++rr) {
            for (std::size_t cc = c > 0 ? c - 1 : 0; cc <= std::min(c + 1, n - 1); ++cc) {
              if (owner[rr * n + cc] != bg) {
                clash = true;
                break;
              }
            }
          }
        }
      }
      if (clash || !m.any()) continue;
      for (std::size_t i = 0; i < n * n; ++i) {
        if (m[i]) owner[i] = pi;
      }
      layer.placement = pl;
      placed = true;
    }
    if (!placed) {
      throw GenerationError(spec.name + ": could not place primitive " + prim.id + " after " +
                            std::to_string(kPlacementRetries) + " attempts (spec overcrowded)");
    }
  }

  rec.image = Tensor3(n, n, 3);
  rec.masks.reserve(spec.primitives.size());
  for (const auto& prim : spec.primitives) rec.masks.emplace_back(prim.id, Mask2(n, n));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const std::size_t pi = owner[r * n + c];
      const Rgb8 rgb = evaluate(rec.layers[pi].fill, r, c, rec.layers[pi].phase);
      for (std::size_t ch = 0; ch < 3; ++ch) rec.image.at(r, c, ch) = static_cast<float>(rgb[ch]) / 255.0f;
      rec.masks[pi].second.set(r, c, true);
    }
  }
  return rec;
}

struct GenerationSummary {
  std::size_t images = 0;
  std::vector<std::size_t> per_class;
  std::size_t mask_dirs = 0;
};

inline std::string image_id(const DatasetSpec& spec, std::size_t class_idx, std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu", index);
  return spec.classes[class_idx] + "_" + buf;
}

inline nlohmann::json spec_to_json(const DatasetSpec& spec) {
  nlohmann::json prims = nlohmann::json::array();
  for (const auto& p : spec.primitives) {
    nlohmann::json glyphs = nlohmann::json::array();
    for (Glyph g : p.glyphs) glyphs.push_back(std::string(to_string(g)));
    nlohmann::json fills = nlohmann::json::array();
    for (const auto& f : p.fills) {
      fills.push_back({{"texture", std::string(to_string(f.texture))},
                       {"color", {f.color[0], f.color[1], f.color[2]}}});
    }
    prims.push_back({{"id", p.id},
                     {"important", p.important},
                     {"background", p.full_frame},
                     {"glyphs", glyphs},
                     {"fills", fills},
                     {"size_px", p.size_px},
                     {"appearance", p.appearance}});
  }
  return {{"name", spec.name},
          {"classes", spec.classes},
          {"primitives", prims},
          {"image_size", spec.image_size},
          {"per_class_count", spec.per_class_count}};
}

/// Writes images, masks and manifest.json under `out_dir`.
inline GenerationSummary generate_dataset(const DatasetSpec& spec, std::uint64_t seed,
                                          const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  check_spec(spec);
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());
  for (const auto& cls : spec.classes) {
    fs::create_directories(out_dir / "images" / cls, ec);
    if (ec) throw IoError("cannot create image directory: " + ec.message());
  }
  for (const auto& p : spec.primitives) {
    fs::create_directories(out_dir / "masks" / p.id, ec);
    if (ec) throw IoError("cannot create mask directory: " + ec.message());
  }

  GenerationSummary summary;
  summary.per_class.assign(spec.classes.size(), 0);
  summary.mask_dirs = spec.primitives.size();
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t k = 0; k < spec.classes.size(); ++k) {
    for (std::size_t i = 0; i < spec.per_class_count; ++i) {
      const ImageRecord rec = render_image(spec, k, {seed, i});
      const std::string id = image_id(spec, k, i);
      char name[16];
      std::snprintf(name, sizeof name, "%04zu.png", i);
      const std::string rel_image = "images/" + spec.classes[k] + "/" + name;
      write_rgb(out_dir / rel_image, rec.image);
      nlohmann::json mask_paths = nlohmann::json::object();
      nlohmann::json present = nlohmann::json::array();
      for (const auto& [pid, m] : rec.masks) {
        const std::string rel_mask = "masks/" + pid + "/" + id + ".png";
        write_mask(out_dir / rel_mask, m);
        mask_paths[pid] = rel_mask;
        if (m.any()) present.push_back(pid);
      }
      files.push_back({{"id", id},
                       {"path", rel_image},
                       {"class", k},
                       {"mask_paths", mask_paths},
                       {"present", present}});
      ++summary.per_class[k];
      ++summary.images;
    }
  }

  nlohmann::json manifest = spec_to_json(spec);
  manifest["seed"] = seed;
  manifest["files"] = files;
  std::ofstream out(out_dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (out_dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("write failed: manifest.json");
  return summary;
}

}  // namespace eclad::synth
