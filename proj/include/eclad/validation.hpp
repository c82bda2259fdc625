#pragma once

// Concept-extraction validation against ground-truth primitive masks:
// EDT-based association distance, concept/primitive alignment,
// representation and importance correctness, and the mask-metric studies.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "eclad/dataset.hpp"
#include "eclad/eclad.hpp"
#include "eclad/errors.hpp"
#include "eclad/glyphs.hpp"
#include "eclad/image_io.hpp"
#include "eclad/tensor.hpp"

namespace eclad {

namespace detail {

inline void require_same_dims(const Mask2& a, const Mask2& b, const char* what) {
  if (!a.same_dims(b)) {
    throw InvalidArgument(std::string(what) + ": mask dims differ (" + std::to_string(a.height()) + "x" +
                          std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                          std::to_string(b.width()) + ")");
  }
}

inline double masked_sum(const Mask2& m, const Field2& f) {
  double acc = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i]) acc += f[i];
  }
  return acc;
}

}  // namespace detail

/// Sum over pixels of m_p of the distance to the nearest pixel of m_c
/// (the frame diagonal when m_c is empty).
inline double one_way_dst(const Mask2& m_p, const Mask2& m_c) {
  detail::require_same_dims(m_p, m_c, "one_way_dst");
  if (!m_p.any()) return 0.0;
  return detail::masked_sum(m_p, edt(m_c));
}

struct AssociationMatrix {
  std::size_t n_primitives = 0;
  std::size_t n_concepts = 0;
  std::vector<std::vector<double>> dst;       // mean over images of dst_pc + dst_cp
  std::vector<std::vector<double>> dst_norm;  // per-pixel distance, px
  std::vector<double> coverage;               // per concept: fraction of images with a non-empty mask
  std::size_t images = 0;
};

/// Accumulates the two-way distances image by image, in call order.
class AssociationAccumulator {
 public:
  AssociationAccumulator(std::size_t n_primitives, std::size_t n_concepts)
      : np_(n_primitives), nc_(n_concepts), sum_(np_, std::vector<double>(nc_)),
        pixels_(np_, std::vector<double>(nc_)), nonempty_(nc_) {}

  void add(const std::vector<Mask2>& primitives, const std::vector<Mask2>& concepts) {
    if (primitives.size() != np_ || concepts.size() != nc_) {
      throw InvalidArgument("association: expected " + std::to_string(np_) + " primitive and " +
                            std::to_string(nc_) + " concept masks per image");
    }
    const Mask2& ref = primitives.empty() ? concepts.front() : primitives.front();
    if (dims_ && (dims_->first != ref.height() || dims_->second != ref.width())) {
      throw InvalidArgument("association: mask dims differ across images");
    }
    dims_ = {ref.height(), ref.width()};
    std::vector<Field2> edt_p;
    std::vector<Field2> edt_c;
    for (const auto& m : primitives) {
      detail::require_same_dims(ref, m, "association");
      edt_p.push_back(edt(m));
    }
    for (const auto& m : concepts) {
      detail::require_same_dims(ref, m, "association");
      edt_c.push_back(edt(m));
    }
    for (std::size_t c = 0; c < nc_; ++c) {
      if (concepts[c].any()) nonempty_[c] += 1.0;
    }
    for (std::size_t p = 0; p < np_; ++p) {
      const double np_px = static_cast<double>(primitives[p].count());
      for (std::size_t c = 0; c < nc_; ++c) {
        const double pc = primitives[p].any() ? detail::masked_sum(primitives[p], edt_c[c]) : 0.0;
        const double cp = concepts[c].any() ? detail::masked_sum(concepts[c], edt_p[p]) : 0.0;
        sum_[p][c] += pc + cp;
        pixels_[p][c] += np_px + static_cast<double>(concepts[c].count());
      }
    }
    ++images_;
  }

  AssociationMatrix finish() const {
    if (images_ == 0) throw InvalidArgument("association: empty dataset");
    AssociationMatrix m;
    m.n_primitives = np_;
    m.n_concepts = nc_;
    m.images = images_;
    m.dst.assign(np_, std::vector<double>(nc_));
    m.dst_norm.assign(np_, std::vector<double>(nc_));
    for (std::size_t p = 0; p < np_; ++p) {
      for (std::size_t c = 0; c < nc_; ++c) {
        m.dst[p][c] = sum_[p][c] / static_cast<double>(images_);
        m.dst_norm[p][c] = pixels_[p][c] > 0.0 ? sum_[p][c] / pixels_[p][c] : 0.0;
      }
    }
    for (double v : nonempty_) m.coverage.push_back(v / static_cast<double>(images_));
    return m;
  }

 private:
  std::size_t np_;
  std::size_t nc_;
  std::vector<std::vector<double>> sum_;
  std::vector<std::vector<double>> pixels_;
  std::vector<double> nonempty_;
  std::size_t images_ = 0;
  std::optional<std::pair<std::size_t, std::size_t>> dims_;
};

/// DST between two mask families given as per-image lists (primitives[i][p], concepts[i][c]).
inline AssociationMatrix association_distance(const std::vector<std::vector<Mask2>>& primitives,
                                              const std::vector<std::vector<Mask2>>& concepts) {
  if (primitives.empty() || primitives.size() != concepts.size()) {
    throw InvalidArgument("association: need the same non-zero number of images on both sides");
  }
  AssociationAccumulator acc(primitives.front().size(), concepts.front().size());
  for (std::size_t i = 0; i < primitives.size(); ++i) acc.add(primitives[i], concepts[i]);
  return acc.finish();
}

/// Default alignment threshold: 10 px at 224, scaled with the image side.
inline double default_t_dst(std::size_t image_size) { return 10.0 * static_cast<double>(image_size) / 224.0; }

struct ConceptAlignment {
  std::size_t nearest = 0;  // primitive index
  bool aligned = false;
  double dst = 0.0;
  double dst_norm = 0.0;
};

inline std::vector<ConceptAlignment> associate(const AssociationMatrix& m, const std::vector<bool>& important,
                                               double t_dst) {
  if (m.n_primitives == 0 || m.n_concepts == 0) throw InvalidArgument("associate: empty association matrix");
  if (important.size() != m.n_primitives) throw InvalidArgument("associate: importance flags do not match primitives");
  std::vector<ConceptAlignment> out;
  for (std::size_t c = 0; c < m.n_concepts; ++c) {
    std::size_t best = 0;
    for (std::size_t p = 1; p < m.n_primitives; ++p) {
      if (m.dst[p][c] < m.dst[best][c]) best = p;
    }
    ConceptAlignment a;
    a.nearest = best;
    a.dst = m.dst[best][c];
    a.dst_norm = m.dst_norm[best][c];
    a.aligned = important[best] && a.dst_norm <= t_dst;
    out.push_back(a);
  }
  return out;
}

/// Minus the mean raw DST over aligned concepts; nullopt when none is aligned.
inline std::optional<double> representation_correctness(const std::vector<ConceptAlignment>& alignment) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& a : alignment) {
    if (!a.aligned) continue;
    sum += a.dst;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return 0.0 - sum / static_cast<double>(n);  // +0 rather than -0 in the ideal case
}

/// Gap between mean |I| of aligned and unaligned concepts, over max |I|.
/// nullopt when either group is empty or every importance is zero.
inline std::optional<double> importance_correctness(const std::vector<ConceptAlignment>& alignment,
                                                    const std::vector<double>& importances) {
  if (alignment.size() != importances.size()) {
    throw InvalidArgument("importance_correctness: one importance per concept required");
  }
  double sa = 0.0;
  double su = 0.0;
  std::size_t na = 0;
  std::size_t nu = 0;
  double max_abs = 0.0;
  for (std::size_t j = 0; j < alignment.size(); ++j) {
    const double v = std::abs(importances[j]);
    max_abs = std::max(max_abs, v);
    if (alignment[j].aligned) {
      sa += v;
      ++na;
    } else {
      su += v;
      ++nu;
    }
  }
  if (na == 0 || nu == 0 || max_abs == 0.0) return std::nullopt;
  return (sa / static_cast<double>(na) - su / static_cast<double>(nu)) / max_abs;
}

/// Maps a TCAV score in [0, 1] onto a signed importance in [-1, 1].
inline double normalize_tcav(double q) {
  if (!(q >= 0.0 && q <= 1.0)) throw InvalidArgument("TCAV score must lie in [0, 1]");
  return 2.0 * q - 1.0;
}

// ---------------------------------------------------------------------------
// Baseline overlap metrics

struct BaselineMetrics {
  double jaccard = 0.0;
  double nmi = 0.0;
  double ari = 0.0;
};

inline BaselineMetrics baseline_metrics(const Mask2& a, const Mask2& b) {
  detail::require_same_dims(a, b, "baseline_metrics");
  double n[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < a.size(); ++i) n[a[i] ? 1 : 0][b[i] ? 1 : 0] += 1.0;
  const double total = static_cast<double>(a.size());
  BaselineMetrics out;

  const double uni = n[1][1] + n[1][0] + n[0][1];
  out.jaccard = uni > 0.0 ? n[1][1] / uni : 1.0;

  const double ra[2] = {n[0][0] + n[0][1], n[1][0] + n[1][1]};
  const double cb[2] = {n[0][0] + n[1][0], n[0][1] + n[1][1]};
  auto entropy = [total](const double* v) {
    double h = 0.0;
    for (int i = 0; i < 2; ++i) {
      if (v[i] > 0.0) h -= v[i] / total * std::log(v[i] / total);
    }
    return h;
  };
  double mi = 0.0;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      if (n[i][j] > 0.0) mi += n[i][j] / total * std::log(total * n[i][j] / (ra[i] * cb[j]));
    }
  }
  const double ha = entropy(ra);
  const double hb = entropy(cb);
  // Both partitions trivial: identical labellings by convention.
  out.nmi = (ha + hb) > 0.0 ? std::max(0.0, mi) / ((ha + hb) / 2.0) : 1.0;

  auto comb2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double sum_ij = 0.0;
  for (auto& row : n) {
    for (double v : row) sum_ij += comb2(v);
  }
  const double sum_a = comb2(ra[0]) + comb2(ra[1]);
  const double sum_b = comb2(cb[0]) + comb2(cb[1]);
  const double expected = sum_a * sum_b / comb2(total);
  const double max_index = (sum_a + sum_b) / 2.0;
  out.ari = max_index - expected != 0.0 ? (sum_ij - expected) / (max_index - expected) : 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Metric studies

struct StudyRow {
  double parameter = 0.0;  // offset or ring gap, px
  double dst = 0.0;
  double dst_norm = 0.0;
  BaselineMetrics baseline;
};

/// Glyph mask used by the studies: upright glyph of height `height_px`.
inline Mask2 study_glyph(synth::Glyph g, std::size_t frame, double height_px, double center_col) {
  const synth::Placement pl{static_cast<double>(frame) / 2.0, center_col, height_px, 0.0};
  return synth::rasterize(synth::glyph_shape(g), pl, frame, frame);
}

/// Horizontal shift to the right by `offset` px; pixels leaving the frame are dropped.
inline Mask2 shift_right(const Mask2& m, std::size_t offset) {
  Mask2 out(m.height(), m.width());
  for (std::size_t r = 0; r < m.height(); ++r) {
    for (std::size_t c = 0; c + offset < m.width(); ++c) {
      if (m(r, c)) out.set(r, c + offset, true);
    }
  }
  return out;
}

inline StudyRow compare_masks(double parameter, const Mask2& a, const Mask2& b) {
  StudyRow row;
  row.parameter = parameter;
  row.dst = one_way_dst(a, b) + one_way_dst(b, a);
  const double px = static_cast<double>(a.count() + b.count());
  row.dst_norm = px > 0.0 ? row.dst / px : 0.0;
  row.baseline = baseline_metrics(a, b);
  return row;
}

inline std::vector<StudyRow> offset_study(const Mask2& glyph, const std::vector<std::size_t>& offsets) {
  if (offsets.empty()) throw InvalidArgument("offset study: no offsets given");
  if (!glyph.any()) throw InvalidArgument("offset study: empty glyph mask");
  std::vector<StudyRow> rows;
  for (std::size_t o : offsets) {
    const Mask2 shifted = shift_right(glyph, o);
    if (!shifted.any()) throw InvalidArgument("offset " + std::to_string(o) + " moves the glyph out of frame");
    rows.push_back(compare_masks(static_cast<double>(o), glyph, shifted));
  }
  return rows;
}

/// Pixels at distance in (gap, gap + width] from the glyph.
inline Mask2 ring_mask(const Mask2& glyph, double gap, double width) {
  const Field2 d = edt(glyph);
  Mask2 ring(glyph.height(), glyph.width());
  for (std::size_t i = 0; i < ring.size(); ++i) ring.set(i, d[i] > gap && d[i] <= gap + width);
  return ring;
}

inline std::vector<StudyRow> surround_study(const Mask2& glyph, const std::vector<double>& gaps,
                                            double width = 4.0) {
  if (gaps.empty()) throw InvalidArgument("surround study: no ring distances given");
  if (!glyph.any()) throw InvalidArgument("surround study: empty glyph mask");
  if (!(width > 0.0)) throw InvalidArgument("surround study: ring width must be positive");
  // Bounding box of the glyph; the full ring must stay inside the frame.
  std::size_t r0 = glyph.height(), r1 = 0, c0 = glyph.width(), c1 = 0;
  for (std::size_t r = 0; r < glyph.height(); ++r) {
    for (std::size_t c = 0; c < glyph.width(); ++c) {
      if (!glyph(r, c)) continue;
      r0 = std::min(r0, r);
      r1 = std::max(r1, r);
      c0 = std::min(c0, c);
      c1 = std::max(c1, c);
    }
  }
  std::vector<StudyRow> rows;
  for (double g : gaps) {
    if (g < 0.0) throw InvalidArgument("surround study: negative ring distance");
    const double reach = g + width;
    if (static_cast<double>(r0) - reach < 0.0 || static_cast<double>(c0) - reach < 0.0 ||
        static_cast<double>(r1) + reach >= static_cast<double>(glyph.height()) ||
        static_cast<double>(c1) + reach >= static_cast<double>(glyph.width())) {
      throw InvalidArgument("surround study: ring at distance " + std::to_string(g) + " leaves the frame");
    }
    rows.push_back(compare_masks(g, glyph, ring_mask(glyph, g, width)));
  }
  return rows;
}

inline std::string study_csv(const std::vector<StudyRow>& rows, const std::string& parameter_name) {
  std::ostringstream out;
  out.precision(10);
  out << parameter_name << ",dst,dst_norm,jaccard,nmi,ari\n";
  for (const auto& r : rows) {
    out << r.parameter << ',' << r.dst << ',' << r.dst_norm << ',' << r.baseline.jaccard << ','
        << r.baseline.nmi << ',' << r.baseline.ari << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Concept mask sources

/// Per-image concept masks plus one signed importance per concept.
class ConceptMaskSource {
 public:
  virtual ~ConceptMaskSource() = default;
  virtual const std::vector<std::string>& concept_ids() const = 0;
  virtual const std::vector<double>& importances() const = 0;
  virtual std::vector<Mask2> masks(std::size_t image_index) const = 0;
};

/// Masks from a fitted concept model evaluated over a tap source; I = RI.
class EcladMaskSource : public ConceptMaskSource {
 public:
  EcladMaskSource(ConceptModel model, std::vector<double> ri, std::shared_ptr<const TapSource> taps)
      : model_(std::move(model)), ri_(std::move(ri)), taps_(std::move(taps)) {
    if (ri_.size() != model_.n_concepts()) throw InvalidArgument("one importance per concept required");
    for (std::size_t j = 0; j < model_.n_concepts(); ++j) ids_.push_back("c" + std::to_string(j));
  }

  /// Loads the model and RI vector from an eclad_report.json.
  static EcladMaskSource from_report(const std::filesystem::path& report, std::shared_ptr<const TapSource> taps) {
    std::ifstream in(report);
    if (!in) throw IoError("cannot read " + report.string());
    nlohmann::json j;
    try {
      in >> j;
      return EcladMaskSource(model_from_json(j.at("model")), j.at("ri").get<std::vector<double>>(), std::move(taps));
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument("malformed report " + report.string() + ": " + e.what());
    }
  }

  const std::vector<std::string>& concept_ids() const override { return ids_; }
  const std::vector<double>& importances() const override { return ri_; }
  std::vector<Mask2> masks(std::size_t i) const override { return localize(*taps_, model_, i); }

 private:
  ConceptModel model_;
  std::vector<double> ri_;
  std::shared_ptr<const TapSource> taps_;
  std::vector<std::string> ids_;
};

/// External masks: <dir>/concepts/<concept_id>/<image_id>.png and <dir>/importances.json.
/// With `tcav_scores` the importances are TCAV scores in [0, 1] and get mapped to [-1, 1].
class DirectoryMaskSource : public ConceptMaskSource {
 public:
  DirectoryMaskSource(std::filesystem::path dir, const Dataset& dataset, bool tcav_scores = false)
      : dir_(std::move(dir)) {
    const auto imp_path = dir_ / "importances.json";
    std::ifstream in(imp_path);
    if (!in) throw IoError("cannot read " + imp_path.string());
    nlohmann::json j;
    try {
      in >> j;
      for (const auto& [id, v] : j.items()) {
        ids_.push_back(id);
        const double q = v.get<double>();
        importances_.push_back(tcav_scores ? normalize_tcav(q) : q);
      }
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument("malformed " + imp_path.string() + ": " + e.what());
    }
    if (ids_.empty()) throw InvalidArgument(imp_path.string() + " lists no concepts");
    for (const auto& f : dataset.files()) image_ids_.push_back(f.id);

    std::vector<std::string> missing;
    for (const auto& id : ids_) {
      for (const auto& img : image_ids_) {
        if (!std::filesystem::exists(path(id, img))) missing.push_back(path(id, img).string());
      }
    }
    if (!missing.empty()) {
      std::string msg = "missing concept masks (" + std::to_string(missing.size()) + "):";
      for (const auto& m : missing) msg += "\n  " + m;
      throw IoError(msg);
    }
  }

  const std::vector<std::string>& concept_ids() const override { return ids_; }
  const std::vector<double>& importances() const override { return importances_; }
  std::vector<Mask2> masks(std::size_t i) const override {
    std::vector<Mask2> out;
    for (const auto& id : ids_) out.push_back(read_mask(path(id, image_ids_.at(i))));
    return out;
  }

 private:
  std::filesystem::path path(const std::string& concept_id, const std::string& image_id) const {
    return dir_ / "concepts" / concept_id / (image_id + ".png");
  }

  std::filesystem::path dir_;
  std::vector<std::string> ids_;
  std::vector<double> importances_;
  std::vector<std::string> image_ids_;
};

// ---------------------------------------------------------------------------
// End-to-end validation

struct ValidationConfig {
  std::optional<double> t_dst;  // default: scaled from the image size
  std::optional<std::vector<std::string>> important;  // default: manifest flags
  std::optional<std::vector<std::size_t>> images;     // default: every dataset image
  std::size_t overlays_per_concept = 8;
  nlohmann::json source;  // echoed into the report
};

struct CorrectnessReport {
  std::vector<std::string> primitives;
  std::vector<bool> important;
  std::vector<std::string> concepts;
  std::vector<double> importances;
  AssociationMatrix association;
  std::vector<ConceptAlignment> alignment;
  std::optional<double> rc;
  std::optional<double> ic;
  double t_dst = 0.0;
  nlohmann::json json;
};

namespace detail {

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

// Concept pixels tinted toward red, everything else attenuated.
inline Tensor3 overlay(const Tensor3& image, const Mask2& mask) {
  Tensor3 out = image;
  for (std::size_t r = 0; r < image.height(); ++r) {
    for (std::size_t c = 0; c < image.width(); ++c) {
      auto px = out.pixel(r, c);
      if (mask(r, c)) {
        px[0] = 0.5f * px[0] + 0.5f;
        px[1] *= 0.5f;
        px[2] *= 0.5f;
      } else {
        for (float& v : px) v *= 0.3f;
      }
    }
  }
  return out;
}

}  // namespace detail

inline nlohmann::json alignment_json(const CorrectnessReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t j = 0; j < r.concepts.size(); ++j) {
    const auto& a = r.alignment[j];
    rows.push_back({{"concept", r.concepts[j]},
                    {"importance", r.importances[j]},
                    {"nearest_primitive", r.primitives[a.nearest]},
                    {"dst", a.dst},
                    {"dst_norm", a.dst_norm},
                    {"aligned", a.aligned},
                    {"coverage", r.association.coverage[j]}});
  }
  return rows;
}

inline std::string concepts_csv(const CorrectnessReport& r) {
  std::ostringstream out;
  out.precision(10);
  out << "concept,importance,nearest_primitive,dst,dst_norm,aligned,coverage\n";
  for (std::size_t j = 0; j < r.concepts.size(); ++j) {
    const auto& a = r.alignment[j];
    out << r.concepts[j] << ',' << r.importances[j] << ',' << r.primitives[a.nearest] << ',' << a.dst << ','
        << a.dst_norm << ',' << (a.aligned ? 1 : 0) << ',' << r.association.coverage[j] << '\n';
  }
  return out.str();
}

/// Localization -> association -> correctness. Writes validation_report.json,
/// concepts.csv and overlays/<concept>/<image>.png when `out_dir` is set.
inline CorrectnessReport validate_ce(const Dataset& dataset, const ConceptMaskSource& source,
                                     const ValidationConfig& cfg,
                                     const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
  CorrectnessReport rep;
  Dataset ds = dataset;
  if (cfg.important) ds.set_important(*cfg.important);
  for (const auto& p : ds.primitives()) {
    rep.primitives.push_back(p.id);
    rep.important.push_back(p.important);
  }
  rep.concepts = source.concept_ids();
  rep.importances = source.importances();
  rep.t_dst = cfg.t_dst.value_or(default_t_dst(ds.image_size()));
  if (!(rep.t_dst >= 0.0)) throw InvalidArgument("t_dst must be non-negative");

  std::vector<std::size_t> images;
  if (cfg.images) {
    images = *cfg.images;
  } else {
    images.resize(ds.size());
    std::iota(images.begin(), images.end(), 0);
  }
  if (images.empty()) throw InvalidArgument("validate: no images");

  // Per-image distance work runs in parallel; accumulation stays in image order.
  struct PerImage {
    std::vector<Mask2> primitives;
    std::vector<Mask2> concepts;
  };
  AssociationAccumulator acc(rep.primitives.size(), rep.concepts.size());
  std::vector<std::size_t> overlays_written(rep.concepts.size(), 0);
  if (out_dir) {
    for (const auto& c : rep.concepts) std::filesystem::create_directories(*out_dir / "overlays" / c);
  }
  const std::size_t chunk = std::max<std::size_t>(1, thread_count() * 4);
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const std::size_t end = std::min(images.size(), start + chunk);
    std::vector<PerImage> batch(end - start);
    parallel_for(end - start, [&](std::size_t k) {
      const std::size_t i = images[start + k];
      batch[k].primitives = ds.load_masks(i);
      batch[k].concepts = source.masks(i);
    });
    for (std::size_t k = 0; k < batch.size(); ++k) {
      acc.add(batch[k].primitives, batch[k].concepts);
      if (!out_dir) continue;
      const std::size_t i = images[start + k];
      std::optional<Tensor3> img;
      for (std::size_t c = 0; c < rep.concepts.size(); ++c) {
        if (overlays_written[c] >= cfg.overlays_per_concept || !batch[k].concepts[c].any()) continue;
        if (!img) img = ds.load_image(i);
        write_rgb(*out_dir / "overlays" / rep.concepts[c] / (ds.files()[i].id + ".png"),
                  detail::overlay(*img, batch[k].concepts[c]));
        ++overlays_written[c];
      }
    }
  }
  rep.association = acc.finish();
  rep.alignment = associate(rep.association, rep.important, rep.t_dst);
  rep.rc = representation_correctness(rep.alignment);
  rep.ic = importance_correctness(rep.alignment, rep.importances);

  std::vector<std::string> important_ids;
  for (std::size_t p = 0; p < rep.primitives.size(); ++p) {
    if (rep.important[p]) important_ids.push_back(rep.primitives[p]);
  }
  rep.json = {{"config", {{"t_dst", rep.t_dst}, {"important", important_ids}, {"images", images.size()},
                          {"dataset", ds.name()}, {"source", cfg.source}}},
              {"primitives", rep.primitives},
              {"concepts", rep.concepts},
              {"dst", rep.association.dst},
              {"dst_norm", rep.association.dst_norm},
              {"coverage", rep.association.coverage},
              {"alignment", alignment_json(rep)},
              {"rc", detail::optional_json(rep.rc)},
              {"ic", detail::optional_json(rep.ic)}};
  if (out_dir) {
    std::ofstream js(*out_dir / "validation_report.json");
    js << rep.json.dump(2) << "\n";
    std::ofstream csv(*out_dir / "concepts.csv");
    csv << concepts_csv(rep);
    if (!js || !csv) throw IoError("failed writing validation outputs to " + out_dir->string());
  }
  return rep;
}

/// RC and IC over the union of concepts from several runs.
inline std::pair<std::optional<double>, std::optional<double>> pooled_correctness(
    const std::vector<CorrectnessReport>& runs) {
  std::vector<ConceptAlignment> all;
  std::vector<double> imp;
  for (const auto& r : runs) {
    all.insert(all.end(), r.alignment.begin(), r.alignment.end());
    imp.insert(imp.end(), r.importances.begin(), r.importances.end());
  }
  return {representation_correctness(all), importance_correctness(all, imp)};
}

}  // namespace eclad
