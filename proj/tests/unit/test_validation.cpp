#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "eclad/synthgen.hpp"
#include "eclad/validation.hpp"
#include "test_util.hpp"

using namespace eclad;

namespace {

Mask2 single(std::size_t h, std::size_t w, std::size_t r, std::size_t c) {
  Mask2 m(h, w);
  m.set(r * w + c, true);
  return m;
}

double brute_one_way(const Mask2& a, const Mask2& b) {
  double s = 0;
  for (std::size_t r = 0; r < a.height(); ++r) {
    for (std::size_t c = 0; c < a.width(); ++c) {
      if (a(r, c)) s += testutil::brute_distance(b, r, c);
    }
  }
  return s;
}

ConceptAlignment aligned(double dst) { return {0, true, dst, 0.0}; }
ConceptAlignment unaligned() { return {0, false, 0.0, 0.0}; }

// Concepts taken straight from a dataset's masks.
class MaskListSource : public ConceptMaskSource {
 public:
  MaskListSource(const Dataset& ds, std::vector<std::size_t> primitive_of, std::vector<double> imp)
      : ds_(ds), prim_(std::move(primitive_of)), imp_(std::move(imp)) {
    for (std::size_t j = 0; j < prim_.size(); ++j) ids_.push_back("k" + std::to_string(j));
  }
  const std::vector<std::string>& concept_ids() const override { return ids_; }
  const std::vector<double>& importances() const override { return imp_; }
  std::vector<Mask2> masks(std::size_t i) const override {
    const auto all = ds_.load_masks(i);
    std::vector<Mask2> out;
    for (std::size_t p : prim_) out.push_back(all.at(p));
    return out;
  }

 private:
  const Dataset& ds_;
  std::vector<std::size_t> prim_;
  std::vector<double> imp_;
  std::vector<std::string> ids_;
};

struct SmallAB {
  testutil::TempDir dir;
  Dataset ds;
  SmallAB() {
    auto spec = synth::builtin_spec("AB");
    spec.image_size = 64;
    spec.per_class_count = 3;
    synth::generate_dataset(spec, 5, dir.path());
    ds = Dataset::open(dir.path());
  }
  std::vector<std::size_t> important() const {
    std::vector<std::size_t> out;
    for (std::size_t p = 0; p < ds.primitives().size(); ++p) {
      if (ds.primitives()[p].important) out.push_back(p);
    }
    return out;
  }
  std::size_t background() const {
    for (std::size_t p = 0; p < ds.primitives().size(); ++p) {
      if (ds.primitives()[p].background) return p;
    }
    return 0;
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// Distances

TEST(Dst, OneWayExamples) {
  EXPECT_DOUBLE_EQ(one_way_dst(single(8, 8, 0, 0), single(8, 8, 3, 4)), 5.0);
  EXPECT_DOUBLE_EQ(one_way_dst(Mask2(8, 8), single(8, 8, 3, 4)), 0.0);
  const Mask2 sq = testutil::rect_mask(8, 8, 2, 2, 3, 3);
  EXPECT_DOUBLE_EQ(one_way_dst(sq, sq), 0.0);
  // empty target: every pixel costs the frame diagonal
  EXPECT_DOUBLE_EQ(one_way_dst(sq, Mask2(8, 8)), 9.0 * std::sqrt(128.0));
  EXPECT_THROW(one_way_dst(sq, Mask2(8, 9)), InvalidArgument);
}

TEST(Dst, OneWayMatchesBruteForce) {
  std::mt19937_64 g(8);
  for (int t = 0; t < 40; ++t) {
    const std::size_t h = 5 + t % 13, w = 4 + (t * 7) % 17;
    const Mask2 a = testutil::random_mask(g, h, w, 0.2);
    const Mask2 b = testutil::random_mask(g, h, w, 0.1 + 0.02 * (t % 5));
    EXPECT_NEAR(one_way_dst(a, b), brute_one_way(a, b), 1e-6);
    EXPECT_DOUBLE_EQ(one_way_dst(a, a), 0.0);
  }
}

TEST(Dst, SinglePixelsFiveApart) {
  const auto m = association_distance({{single(16, 16, 4, 2)}}, {{single(16, 16, 4, 7)}});
  EXPECT_DOUBLE_EQ(m.dst[0][0], 10.0);
  EXPECT_DOUBLE_EQ(m.dst_norm[0][0], 5.0);
}

TEST(Dst, IdenticalFamiliesGiveZero) {
  std::mt19937_64 g(4);
  std::vector<std::vector<Mask2>> fam;
  for (int i = 0; i < 3; ++i) fam.push_back({testutil::random_mask(g, 10, 10, 0.3)});
  const auto m = association_distance(fam, fam);
  EXPECT_DOUBLE_EQ(m.dst[0][0], 0.0);
}

TEST(Dst, SwappingFamiliesTransposes) {
  std::mt19937_64 g(12);
  std::vector<std::vector<Mask2>> p, c;
  for (int i = 0; i < 3; ++i) {
    p.push_back({testutil::random_mask(g, 9, 11, 0.2), testutil::random_mask(g, 9, 11, 0.1)});
    c.push_back({testutil::random_mask(g, 9, 11, 0.15), testutil::random_mask(g, 9, 11, 0.3),
                 testutil::random_mask(g, 9, 11, 0.05)});
  }
  const auto a = association_distance(p, c);
  const auto b = association_distance(c, p);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_DOUBLE_EQ(a.dst[i][j], b.dst[j][i]);
      EXPECT_DOUBLE_EQ(a.dst_norm[i][j], b.dst_norm[j][i]);
    }
  }
}

TEST(Dst, MeanOverImagesAndCoverage) {
  const Mask2 p0 = single(8, 8, 0, 0);
  const auto m = association_distance({{p0}, {p0}}, {{single(8, 8, 3, 4)}, {Mask2(8, 8)}});
  // image 1: 5 + 5; image 2: cap one way, empty sum the other
  EXPECT_DOUBLE_EQ(m.dst[0][0], (10.0 + std::sqrt(128.0)) / 2.0);
  EXPECT_DOUBLE_EQ(m.coverage[0], 0.5);
}

TEST(Dst, Errors) {
  EXPECT_THROW(association_distance({}, {}), InvalidArgument);
  EXPECT_THROW(association_distance({{Mask2(4, 4)}}, {{Mask2(4, 5)}}), InvalidArgument);
  EXPECT_THROW(association_distance({{Mask2(4, 4)}, {Mask2(5, 5)}}, {{Mask2(4, 4)}, {Mask2(5, 5)}}),
               InvalidArgument);
}

// ---------------------------------------------------------------------------
// Association and correctness

TEST(Associate, CoincidentWithImportantIsAligned) {
  const Mask2 a = testutil::rect_mask(16, 16, 2, 2, 4, 4);
  const Mask2 bg = testutil::rect_mask(16, 16, 0, 0, 16, 16);
  const auto m = association_distance({{a, bg}}, {{a, bg}});
  const auto al = associate(m, {true, false}, 1.0);
  EXPECT_EQ(al[0].nearest, 0u);
  EXPECT_TRUE(al[0].aligned);
  EXPECT_EQ(al[1].nearest, 1u);
  EXPECT_FALSE(al[1].aligned);  // background is never important
}

TEST(Associate, TieGoesToFirstPrimitive) {
  AssociationMatrix m;
  m.n_primitives = 2;
  m.n_concepts = 1;
  m.dst = {{7.0}, {7.0}};
  m.dst_norm = {{0.5}, {0.5}};
  m.coverage = {1.0};
  const auto al = associate(m, {true, true}, 1.0);
  EXPECT_EQ(al[0].nearest, 0u);
  EXPECT_THROW(associate(m, {true}, 1.0), InvalidArgument);
}

TEST(Associate, ThresholdUsesNormalizedDistance) {
  AssociationMatrix m;
  m.n_primitives = 1;
  m.n_concepts = 2;
  m.dst = {{1000.0, 10.0}};
  m.dst_norm = {{2.0, 20.0}};
  m.coverage = {1.0, 1.0};
  const auto al = associate(m, {true}, 5.0);
  EXPECT_TRUE(al[0].aligned);
  EXPECT_FALSE(al[1].aligned);
}

TEST(Correctness, RepresentationArithmetic) {
  EXPECT_DOUBLE_EQ(*representation_correctness({aligned(4), aligned(6), unaligned()}), -5.0);
  EXPECT_DOUBLE_EQ(*representation_correctness({aligned(0), aligned(0)}), 0.0);
  EXPECT_FALSE(representation_correctness({unaligned()}).has_value());
}

TEST(Correctness, ImportanceArithmetic) {
  EXPECT_DOUBLE_EQ(*importance_correctness({aligned(0), unaligned()}, {0.8, 0.4}), 0.5);
  EXPECT_DOUBLE_EQ(*importance_correctness({aligned(0), aligned(0), unaligned()}, {1, -1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(*importance_correctness({aligned(0), unaligned()}, {0.3, -0.3}), 0.0);
  EXPECT_FALSE(importance_correctness({aligned(0)}, {1.0}).has_value());
  EXPECT_FALSE(importance_correctness({unaligned()}, {1.0}).has_value());
  EXPECT_FALSE(importance_correctness({aligned(0), unaligned()}, {0.0, 0.0}).has_value());
  EXPECT_THROW(importance_correctness({aligned(0)}, {1.0, 2.0}), InvalidArgument);
}

TEST(Correctness, RandomBounds) {
  std::mt19937_64 g(31);
  std::uniform_real_distribution<double> u(-1, 1);
  std::bernoulli_distribution coin(0.5);
  for (int t = 0; t < 200; ++t) {
    std::vector<ConceptAlignment> al;
    std::vector<double> imp;
    for (int j = 0; j < 6; ++j) {
      al.push_back(coin(g) ? aligned(std::abs(u(g)) * 100) : unaligned());
      imp.push_back(u(g));
    }
    if (auto ic = importance_correctness(al, imp)) {
      EXPECT_GE(*ic, -1.0);
      EXPECT_LE(*ic, 1.0);
    }
    if (auto rc = representation_correctness(al)) EXPECT_LE(*rc, 0.0);
  }
}

TEST(Correctness, TcavNormalization) {
  EXPECT_DOUBLE_EQ(normalize_tcav(0.5), 0.0);
  EXPECT_DOUBLE_EQ(normalize_tcav(1.0), 1.0);
  EXPECT_DOUBLE_EQ(normalize_tcav(0.0), -1.0);
  EXPECT_LT(normalize_tcav(0.2), normalize_tcav(0.3));
  EXPECT_THROW(normalize_tcav(1.01), InvalidArgument);
  EXPECT_THROW(normalize_tcav(-0.1), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Baseline metrics and studies

TEST(Baselines, Examples) {
  const Mask2 a = testutil::rect_mask(16, 16, 4, 4, 4, 4);
  const Mask2 b = testutil::rect_mask(16, 16, 4, 6, 4, 4);
  EXPECT_NEAR(baseline_metrics(a, b).jaccard, 1.0 / 3.0, 1e-12);
  const auto same = baseline_metrics(a, a);
  EXPECT_DOUBLE_EQ(same.jaccard, 1.0);
  EXPECT_NEAR(same.ari, 1.0, 1e-12);
  EXPECT_NEAR(same.nmi, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(baseline_metrics(a, testutil::rect_mask(16, 16, 10, 10, 3, 3)).jaccard, 0.0);
  EXPECT_DOUBLE_EQ(baseline_metrics(Mask2(4, 4), Mask2(4, 4)).jaccard, 1.0);
  EXPECT_THROW(baseline_metrics(a, Mask2(4, 4)), InvalidArgument);
}

// Pair-counting ARI and entropy-based NMI from the 2x2 table, computed directly.
TEST(Baselines, MatchDirectFormulas) {
  std::mt19937_64 g(2);
  for (int t = 0; t < 30; ++t) {
    const Mask2 a = testutil::random_mask(g, 9, 7, 0.1 + 0.03 * (t % 10));
    const Mask2 b = testutil::random_mask(g, 9, 7, 0.5 - 0.03 * (t % 10));
    double n[2][2] = {{0, 0}, {0, 0}};
    for (std::size_t i = 0; i < a.size(); ++i) n[a[i]][b[i]] += 1;
    const double N = static_cast<double>(a.size());
    auto c2 = [](double x) { return x * (x - 1) / 2; };
    double sij = 0, sa = 0, sb = 0;
    for (int i = 0; i < 2; ++i) {
      sa += c2(n[i][0] + n[i][1]);
      sb += c2(n[0][i] + n[1][i]);
      for (int j = 0; j < 2; ++j) sij += c2(n[i][j]);
    }
    const double expected = sa * sb / c2(N);
    const double ari = (sij - expected) / (0.5 * (sa + sb) - expected);
    double ha = 0, hb = 0, mi = 0;
    for (int i = 0; i < 2; ++i) {
      const double pa = (n[i][0] + n[i][1]) / N, pb = (n[0][i] + n[1][i]) / N;
      if (pa > 0) ha -= pa * std::log(pa);
      if (pb > 0) hb -= pb * std::log(pb);
    }
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) {
        if (n[i][j] == 0) continue;
        const double pij = n[i][j] / N;
        mi += pij * std::log(pij / (((n[i][0] + n[i][1]) / N) * ((n[0][j] + n[1][j]) / N)));
      }
    }
    const auto got = baseline_metrics(a, b);
    EXPECT_NEAR(got.ari, ari, 1e-9);
    EXPECT_NEAR(got.nmi, mi / (0.5 * (ha + hb)), 1e-9);
  }
}

TEST(Studies, OffsetIsStrictlyIncreasing) {
  const Mask2 glyph = study_glyph(synth::Glyph::A, 128, 48, 32);
  std::vector<std::size_t> offsets;
  for (std::size_t o = 0; o <= 60; o += 4) offsets.push_back(o);
  const auto rows = offset_study(glyph, offsets);
  EXPECT_DOUBLE_EQ(rows[0].dst, 0.0);
  EXPECT_DOUBLE_EQ(rows[0].baseline.jaccard, 1.0);
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_GT(rows[i].dst, rows[i - 1].dst) << "offset " << offsets[i];

  std::size_t c0 = 128, c1 = 0;
  for (std::size_t r = 0; r < 128; ++r) {
    for (std::size_t c = 0; c < 128; ++c) {
      if (glyph(r, c)) {
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
      }
    }
  }
  const std::size_t width = c1 - c0 + 1;
  for (const auto& r : rows) {
    if (r.parameter <= static_cast<double>(width)) continue;
    EXPECT_DOUBLE_EQ(r.baseline.jaccard, 0.0);
    EXPECT_DOUBLE_EQ(r.baseline.ari, rows.back().baseline.ari);
    EXPECT_DOUBLE_EQ(r.baseline.nmi, rows.back().baseline.nmi);
  }
}

TEST(Studies, OffsetMatchesBruteForce) {
  const Mask2 glyph = study_glyph(synth::Glyph::A, 128, 48, 32);
  const auto rows = offset_study(glyph, {20, 40});
  double want[2];
  for (int k = 0; k < 2; ++k) {
    const std::size_t o = k == 0 ? 20 : 40;
    Mask2 s(128, 128);
    for (std::size_t r = 0; r < 128; ++r) {
      for (std::size_t c = 0; c + o < 128; ++c) s.set(r * 128 + c + o, glyph(r, c));
    }
    want[k] = brute_one_way(glyph, s) + brute_one_way(s, glyph);
    EXPECT_NEAR(rows[k].dst, want[k], 1e-6 * want[k]);
  }
  EXPECT_GT(want[1], want[0]);
}

TEST(Studies, OffsetErrors) {
  const Mask2 glyph = study_glyph(synth::Glyph::A, 64, 24, 16);
  EXPECT_THROW(offset_study(glyph, {}), InvalidArgument);
  EXPECT_THROW(offset_study(glyph, {64}), InvalidArgument);
  EXPECT_THROW(offset_study(Mask2(64, 64), {1}), InvalidArgument);
}

TEST(Studies, SurroundIsMonotone) {
  const Mask2 glyph = study_glyph(synth::Glyph::A, 128, 48, 64);
  const auto rows = surround_study(glyph, {0, 4, 8, 16}, 4);
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_GT(rows[i].dst, rows[i - 1].dst);
  for (const auto& r : rows) EXPECT_DOUBLE_EQ(r.baseline.jaccard, 0.0);
  EXPECT_THROW(surround_study(glyph, {60}, 4), InvalidArgument);
  EXPECT_THROW(surround_study(glyph, {}, 4), InvalidArgument);
  EXPECT_THROW(surround_study(glyph, {-1}, 4), InvalidArgument);
}

TEST(Studies, CsvHasHeaderAndRows) {
  const Mask2 glyph = study_glyph(synth::Glyph::A, 64, 24, 16);
  const std::string csv = study_csv(offset_study(glyph, {0, 4, 8}), "offset");
  EXPECT_EQ(csv.rfind("offset,", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

// ---------------------------------------------------------------------------
// End to end

TEST(Validate, IdealInput) {
  SmallAB ab;
  const auto imp = ab.important();
  ASSERT_FALSE(imp.empty());
  std::vector<std::size_t> prims = imp;
  std::vector<double> scores(imp.size(), 1.0);
  prims.push_back(ab.background());
  scores.push_back(0.0);
  MaskListSource src(ab.ds, prims, scores);
  testutil::TempDir out;
  ValidationConfig cfg;
  cfg.overlays_per_concept = 2;
  const auto rep = validate_ce(ab.ds, src, cfg, out.path());
  ASSERT_TRUE(rep.rc.has_value());
  ASSERT_TRUE(rep.ic.has_value());
  EXPECT_DOUBLE_EQ(*rep.rc, 0.0);
  EXPECT_DOUBLE_EQ(*rep.ic, 1.0);
  EXPECT_DOUBLE_EQ(rep.t_dst, 10.0 * 64 / 224);
  EXPECT_FALSE(rep.alignment.back().aligned);
  EXPECT_TRUE(std::filesystem::exists(out.path() / "validation_report.json"));
  EXPECT_TRUE(std::filesystem::exists(out.path() / "concepts.csv"));
  EXPECT_TRUE(std::filesystem::is_directory(out.path() / "overlays" / "k0"));
}

TEST(Validate, UndefinedScoresAreNull) {
  SmallAB ab;
  MaskListSource src(ab.ds, {ab.background()}, {0.5});
  const auto rep = validate_ce(ab.ds, src, {});
  EXPECT_FALSE(rep.rc.has_value());
  EXPECT_FALSE(rep.ic.has_value());
  EXPECT_TRUE(rep.json.at("rc").is_null());
  EXPECT_TRUE(rep.json.at("ic").is_null());
}

TEST(Validate, ImportantOverride) {
  SmallAB ab;
  const auto imp = ab.important();
  MaskListSource src(ab.ds, {imp.front()}, {1.0});
  ValidationConfig cfg;
  cfg.important = std::vector<std::string>{};  // nothing important: nothing aligns
  EXPECT_FALSE(validate_ce(ab.ds, src, cfg).alignment[0].aligned);
  cfg.important = std::vector<std::string>{"nope"};
  EXPECT_THROW(validate_ce(ab.ds, src, cfg), InvalidArgument);
}

TEST(Validate, DirectorySource) {
  SmallAB ab;
  testutil::TempDir dir;
  const std::size_t p = ab.important().front();
  std::filesystem::create_directories(dir.path() / "concepts" / "mine");
  std::ofstream(dir.path() / "importances.json") << R"({"mine": 0.75})";
  // missing masks are reported before any work
  try {
    DirectoryMaskSource bad(dir.path(), ab.ds);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("missing concept masks"), std::string::npos);
  }
  for (std::size_t i = 0; i < ab.ds.size(); ++i) {
    write_mask(dir.path() / "concepts" / "mine" / (ab.ds.files()[i].id + ".png"), ab.ds.load_masks(i)[p]);
  }
  DirectoryMaskSource src(dir.path(), ab.ds);
  EXPECT_DOUBLE_EQ(src.importances()[0], 0.75);
  DirectoryMaskSource tcav(dir.path(), ab.ds, true);
  EXPECT_DOUBLE_EQ(tcav.importances()[0], 0.5);
  const auto rep = validate_ce(ab.ds, src, {});
  EXPECT_TRUE(rep.alignment[0].aligned);
  EXPECT_DOUBLE_EQ(*rep.rc, 0.0);
}

TEST(Validate, PooledRuns) {
  CorrectnessReport a, b;
  a.alignment = {aligned(4)};
  a.importances = {0.8};
  b.alignment = {aligned(6), unaligned()};
  b.importances = {0.8, 0.4};
  const auto [rc, ic] = pooled_correctness({a, b});
  EXPECT_DOUBLE_EQ(*rc, -5.0);
  EXPECT_DOUBLE_EQ(*ic, 0.5);
}
