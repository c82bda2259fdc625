#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <set>

#include "eclad/dataset.hpp"
#include "eclad/synthgen.hpp"
#include "test_util.hpp"

using namespace eclad;
using namespace eclad::synth;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

DatasetSpec small(const std::string& name, std::size_t size = 64, std::size_t per_class = 4) {
  auto s = builtin_spec(name);
  s.image_size = size;
  s.per_class_count = per_class;
  return s;
}

}  // namespace

TEST(Specs, BuiltinSet) {
  const auto specs = builtin_specs();
  std::set<std::string> names;
  for (const auto& s : specs) {
    names.insert(s.name);
    EXPECT_EQ(s.image_size, 224u);
    EXPECT_EQ(s.per_class_count, 200u);
    EXPECT_EQ(std::count_if(s.primitives.begin(), s.primitives.end(), [](auto& p) { return p.full_frame; }), 1);
    EXPECT_NO_THROW(check_spec(s));
  }
  EXPECT_EQ(names, (std::set<std::string>{"AB", "ABplus", "BigSmall", "CO", "colorGB", "isA"}));

  const auto ab = builtin_spec("AB");
  ASSERT_EQ(ab.primitives.size(), 4u);
  EXPECT_EQ(ab.primitives[0].id, "p1");
  EXPECT_EQ(ab.primitives[3].id, "p4");
  EXPECT_TRUE(ab.primitives[0].important && ab.primitives[1].important);
  EXPECT_FALSE(ab.primitives[2].important);
  EXPECT_TRUE(ab.primitives[3].full_frame);
  EXPECT_EQ(ab.classes.size(), 2u);
  EXPECT_THROW(builtin_spec("nope"), InvalidArgument);
}

TEST(Render, ClassZeroOfAbHasAButNoB) {
  const auto spec = small("AB");
  for (std::size_t i = 0; i < 5; ++i) {
    const auto rec = render_image(spec, 0, {3, i});
    EXPECT_TRUE(rec.mask("p1").any());
    EXPECT_FALSE(rec.mask("p2").any());
    const auto rec_b = render_image(spec, 1, {3, i});
    EXPECT_FALSE(rec_b.mask("p1").any());
    EXPECT_TRUE(rec_b.mask("p2").any());
  }
  EXPECT_THROW(render_image(spec, 2, {3, 0}), InvalidArgument);
}

TEST(Render, MasksPartitionTheFrame) {
  for (const auto& name : {"AB", "ABplus", "BigSmall", "CO", "colorGB", "isA"}) {
    const auto spec = small(name, 96);
    for (std::size_t k = 0; k < spec.classes.size(); ++k) {
      for (std::size_t i = 0; i < 3; ++i) {
        const auto rec = render_image(spec, k, {9, i});
        for (std::size_t p = 0; p < 96 * 96; ++p) {
          int owners = 0;
          for (const auto& [id, m] : rec.masks) owners += m[p] ? 1 : 0;
          ASSERT_EQ(owners, 1) << name;
        }
      }
    }
  }
}

TEST(Render, Deterministic) {
  const auto spec = small("ABplus", 80);
  const auto a = render_image(spec, 1, {42, 3});
  const auto b = render_image(spec, 1, {42, 3});
  EXPECT_EQ(a.image, b.image);
  for (std::size_t i = 0; i < a.masks.size(); ++i) EXPECT_EQ(a.masks[i].second, b.masks[i].second);
  const auto c = render_image(spec, 1, {43, 3});
  EXPECT_NE(a.image, c.image);
}

TEST(Render, MaskFidelity) {
  for (const auto& name : {"AB", "colorGB", "ABplus"}) {
    const auto spec = small(name, 64);
    for (std::size_t k = 0; k < 2; ++k) {
      for (std::size_t i = 0; i < 4; ++i) {
        const auto rec = render_image(spec, k, {5, i});
        for (std::size_t pi = 0; pi < rec.masks.size(); ++pi) {
          if (spec.primitives[pi].full_frame) continue;
          const Mask2& m = rec.masks[pi].second;
          for (std::size_t r = 0; r < 64; ++r) {
            for (std::size_t c = 0; c < 64; ++c) {
              if (!m(r, c)) continue;
              const Rgb8 want = evaluate(rec.layers[pi].fill, r, c, rec.layers[pi].phase);
              for (std::size_t ch = 0; ch < 3; ++ch) {
                ASSERT_EQ(static_cast<int>(std::lround(rec.image.at(r, c, ch) * 255.0f)), want[ch]);
              }
            }
          }
        }
      }
    }
  }
}

TEST(Render, UnimportantPrimitivesBalancedAcrossClasses) {
  for (const auto& name : {"ABplus", "colorGB", "AB"}) {
    const auto spec = small(name, 64, 200);
    for (std::size_t pi = 0; pi < spec.primitives.size(); ++pi) {
      const auto& prim = spec.primitives[pi];
      if (prim.important || prim.full_frame) continue;
      std::array<double, 2> freq{};
      for (std::size_t k = 0; k < 2; ++k) {
        for (std::size_t i = 0; i < 200; ++i) freq[k] += render_image(spec, k, {17, i}).masks[pi].second.any();
        freq[k] /= 200.0;
      }
      EXPECT_LT(std::abs(freq[0] - freq[1]), 0.05) << name << " " << prim.id;
    }
  }
}

TEST(Render, GlyphSizeScalesWithFrame) {
  // Glyph height is specified at 224 px and scales with the frame.
  auto spec = builtin_spec("isA");
  spec.image_size = 112;
  const auto rec = render_image(spec, 0, {1, 0});
  const Mask2& m = rec.mask("p1");
  std::size_t r0 = 112, r1 = 0;
  for (std::size_t r = 0; r < 112; ++r) {
    for (std::size_t c = 0; c < 112; ++c) {
      if (m(r, c)) r0 = std::min(r0, r), r1 = std::max(r1, r);
    }
  }
  // 100 px at 224 -> 50 px, plus stroke padding and rotation.
  EXPECT_GT(r1 - r0 + 1, 45u);
  EXPECT_LT(r1 - r0 + 1, 70u);
}

TEST(Render, OvercrowdedSpecFails) {
  auto spec = small("AB", 64);
  spec.primitives[0].size_px = 200;
  spec.primitives[2].size_px = 200;
  EXPECT_THROW(render_image(spec, 0, {1, 0}), GenerationError);
}

TEST(Generate, CountsAndLayout) {
  const testutil::TempDir dir("gen");
  const auto summary = generate_dataset(small("AB", 32, 1), 1, dir.path());
  EXPECT_EQ(summary.images, 2u);
  EXPECT_EQ(summary.mask_dirs, 4u);
  const Dataset ds = Dataset::open(dir.path());
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.n_classes(), 2u);
  EXPECT_EQ(ds.image_size(), 32u);
  EXPECT_EQ(ds.primitives().size(), 4u);
  EXPECT_EQ(ds.load_image(0).height(), 32u);
  EXPECT_EQ(ds.load_masks(1).size(), 4u);
}

TEST(Generate, AbDefaults) {
  const testutil::TempDir dir("gen_default");
  const auto summary = generate_dataset(builtin_spec("AB"), 0, dir.path());
  EXPECT_EQ(summary.images, 400u);
  EXPECT_EQ(summary.per_class, (std::vector<std::size_t>{200, 200}));
  EXPECT_EQ(summary.mask_dirs, 4u);
  std::size_t dirs = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "masks")) dirs += e.is_directory();
  EXPECT_EQ(dirs, 4u);
}

TEST(Generate, ClassBalance) {
  const testutil::TempDir dir("gen_balance");
  const auto summary = generate_dataset(small("isA", 32, 7), 2, dir.path());
  EXPECT_EQ(summary.per_class, (std::vector<std::size_t>{7, 7}));
  const Dataset ds = Dataset::open(dir.path());
  std::array<int, 2> n{};
  for (const auto& f : ds.files()) ++n[f.label];
  EXPECT_EQ(n[0], 7);
  EXPECT_EQ(n[1], 7);
}

TEST(Generate, ByteIdenticalAcrossRuns) {
  const testutil::TempDir a("gen_a"), b("gen_b");
  generate_dataset(small("colorGB", 48, 3), 11, a.path());
  generate_dataset(small("colorGB", 48, 3), 11, b.path());
  std::size_t files = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), a.path());
    ASSERT_EQ(slurp(e.path()), slurp(b.path() / rel)) << rel;
    ++files;
  }
  EXPECT_GT(files, 6u);
}

TEST(Generate, MasksRoundTripThroughPng) {
  const testutil::TempDir dir("gen_png");
  const auto spec = small("CO", 40, 2);
  generate_dataset(spec, 4, dir.path());
  const Dataset ds = Dataset::open(dir.path());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& f = ds.files()[i];
    const auto rec = render_image(spec, f.label, {4, i % 2});
    const auto masks = ds.load_masks(i);
    for (std::size_t p = 0; p < masks.size(); ++p) EXPECT_EQ(masks[p], rec.masks[p].second);
  }
}

TEST(Generate, UnwritableOutputIsAnIoError) {
  const testutil::TempDir dir("gen_bad");
  { std::ofstream(dir / "file") << "x"; }
  EXPECT_THROW(generate_dataset(small("AB", 32, 1), 1, dir / "file" / "sub"), IoError);
}
