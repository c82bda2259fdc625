#pragma once

// Command implementations behind the `eclad` tool. Each cmd_* writes its
// outputs under an output directory and throws on failure; run_guarded turns
// that into an exit status plus a `.failed` marker.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "eclad/dataset.hpp"
#include "eclad/eclad.hpp"
#include "eclad/errors.hpp"
#include "eclad/image_io.hpp"
#include "eclad/micronet.hpp"
#include "eclad/parallel.hpp"
#include "eclad/plot.hpp"
#include "eclad/synthgen.hpp"
#include "eclad/validation.hpp"

namespace eclad::cli {

namespace fs = std::filesystem;

struct Global {
  std::uint64_t seed = 0;
  fs::path out = "out";
  bool quiet = false;

  void log(const std::string& msg) const {
    if (!quiet) std::cerr << msg << "\n";
  }
};

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

/// Runs `body`; on failure prints the error, leaves `<out>/.failed` and returns 1.
inline int run_guarded(const fs::path& out, const std::function<void()>& body) {
  const fs::path marker = out / ".failed";
  try {
    fs::create_directories(out);
    fs::remove(marker);
    body();
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::error_code ec;
    fs::create_directories(out, ec);
    std::ofstream m(marker);
    m << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataOptions {
  std::string name;
  std::size_t size = 224;
  std::size_t per_class = 200;
};

inline int cmd_gen_data(const Global& g, const GenDataOptions& o) {
  auto spec = synth::builtin_spec(o.name);
  spec.image_size = o.size;
  spec.per_class_count = o.per_class;
  const auto summary = synth::generate_dataset(spec, g.seed, g.out);
  g.log("gen-data: " + std::to_string(summary.images) + " images of " + spec.name + " in " + g.out.string());
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  fs::path dataset;
  net::Hyper hyper;
  bool center_input = true;
};

inline int cmd_train(const Global& g, TrainOptions o) {
  const Dataset ds = Dataset::open(o.dataset);
  net::Architecture arch;
  arch.input_size = ds.image_size();
  arch.n_classes = ds.n_classes();
  arch.center_input = o.center_input;
  o.hyper.seed = g.seed;
  g.log("train: " + std::to_string(ds.size()) + " images, " + std::to_string(o.hyper.epochs) + " epochs");
  const net::TrainResult r = net::train(arch, o.dataset, o.hyper);
  net::save_checkpoint(r.params, g.out / "model.ectf");

  std::ostringstream csv;
  csv << "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& m : r.history) {
    csv << m.epoch << ',' << fmt(m.train_loss) << ',' << fmt(m.train_accuracy) << ',' << fmt(m.val_loss) << ','
        << fmt(m.val_accuracy) << '\n';
    hist.push_back({{"epoch", m.epoch},
                    {"train_loss", m.train_loss},
                    {"train_accuracy", m.train_accuracy},
                    {"val_loss", m.val_loss},
                    {"val_accuracy", m.val_accuracy}});
  }
  write_text(g.out / "train_metrics.csv", csv.str());
  const nlohmann::json config = {{"dataset", o.dataset.string()},
                                 {"seed", g.seed},
                                 {"epochs", o.hyper.epochs},
                                 {"lr", o.hyper.lr},
                                 {"momentum", o.hyper.momentum},
                                 {"batch", o.hyper.batch},
                                 {"val_fraction", o.hyper.val_fraction},
                                 {"architecture", r.params.arch.to_json()}};
  write_json(g.out / "train_report.json",
             {{"config", config},
              {"initial_train_loss", r.initial_train_loss},
              {"train_images", r.train_indices.size()},
              {"val_images", r.val_indices.size()},
              {"history", hist},
              {"val_accuracy", r.history.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.history.back().val_accuracy)}});
  if (!r.history.empty()) g.log("train: final val accuracy " + fmt(r.history.back().val_accuracy));
  return 0;
}

// ---------------------------------------------------------------------------
// shared: where taps come from

struct TapOptions {
  fs::path dataset;
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> taps;
};

inline std::shared_ptr<const TapSource> open_taps(const TapOptions& t) {
  if (t.dataset.empty()) throw InvalidArgument("--dataset is required");
  if (t.checkpoint.has_value() == t.taps.has_value()) {
    throw InvalidArgument("give exactly one of --checkpoint or --taps");
  }
  Dataset ds = Dataset::open(t.dataset);
  if (t.checkpoint) return std::make_shared<NetworkTapSource>(net::load_checkpoint(*t.checkpoint), std::move(ds));
  return std::make_shared<DirectoryTapSource>(*t.taps, std::move(ds));
}

inline nlohmann::json taps_json(const TapOptions& t) {
  return {{"dataset", t.dataset.string()},
          {"checkpoint", t.checkpoint ? nlohmann::json(t.checkpoint->string()) : nlohmann::json(nullptr)},
          {"taps", t.taps ? nlohmann::json(t.taps->string()) : nlohmann::json(nullptr)}};
}

// ---------------------------------------------------------------------------
// extract

struct ExtractOptions {
  TapOptions taps;
  EcladConfig eclad;
};

inline int cmd_extract(const Global& g, ExtractOptions o) {
  o.eclad.seed = g.seed;
  const auto src = open_taps(o.taps);
  g.log("extract: " + std::to_string(o.eclad.n_concepts) + " concepts over " + std::to_string(src->size()) +
        " images");
  EcladResult res = run_eclad(*src, o.eclad, g.out);
  // Re-emit with the tap source echoed alongside the extraction config.
  res.report["source"] = taps_json(o.taps);
  write_json(g.out / "eclad_report.json", res.report);
  return 0;
}

// ---------------------------------------------------------------------------
// localize

struct LocalizeOptions {
  fs::path report;
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> taps;
  std::optional<fs::path> dataset;
  std::vector<std::string> images;  // files with --checkpoint, image ids with --taps
  double lambda = 0.3;
};

inline plot::Color concept_color(std::size_t j) {
  // Golden-angle hue walk, full saturation.
  const double h = std::fmod(static_cast<double>(j) * 137.508, 360.0) / 60.0;
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  double r = 0, gg = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = 1, gg = x; break;
    case 1: r = x, gg = 1; break;
    case 2: gg = 1, b = x; break;
    case 3: gg = x, b = 1; break;
    case 4: r = x, b = 1; break;
    default: r = 1, b = x; break;
  }
  return {static_cast<std::uint8_t>(std::lround(255 * r)), static_cast<std::uint8_t>(std::lround(255 * gg)),
          static_cast<std::uint8_t>(std::lround(255 * b))};
}

/// Each pixel blended towards its concept colour: (1 - lambda) * x + lambda * colour.
inline Tensor3 concept_overlay(const Tensor3& image, const std::vector<Mask2>& masks, double lambda) {
  Tensor3 out = image;
  for (std::size_t j = 0; j < masks.size(); ++j) {
    const auto col = concept_color(j);
    for (std::size_t r = 0; r < image.height(); ++r) {
      for (std::size_t c = 0; c < image.width(); ++c) {
        if (!masks[j](r, c)) continue;
        for (std::size_t k = 0; k < 3 && k < image.channels(); ++k) {
          out.at(r, c, k) = static_cast<float>((1.0 - lambda) * image.at(r, c, k) + lambda * col[k] / 255.0);
        }
      }
    }
  }
  return out;
}

inline void write_localization(const fs::path& dir, const Tensor3& image, const std::vector<Mask2>& masks,
                               double lambda) {
  fs::create_directories(dir);
  for (std::size_t j = 0; j < masks.size(); ++j) {
    write_mask(dir / ("c" + std::to_string(j) + ".png"), masks[j]);
    write_rgb(dir / ("c" + std::to_string(j) + "_examples.png"), render_examples(image, masks[j], lambda));
  }
  write_rgb(dir / "overlay.png", concept_overlay(image, masks, lambda));
}

inline int cmd_localize(const Global& g, const LocalizeOptions& o) {
  if (!(o.lambda > 0.0 && o.lambda <= 1.0)) throw InvalidArgument("lambda must lie in (0, 1]");
  const ConceptModel model = load_concept_model(o.report);
  nlohmann::json done = nlohmann::json::array();
  if (o.checkpoint) {
    if (o.images.empty()) throw InvalidArgument("localize: no image files given");
    const net::Params params = net::load_checkpoint(*o.checkpoint);
    const auto names = params.arch.tap_names();
    const auto sel = detail::select_layers(names, model.layers);
    // Output dirs are named by file stem, or parent_stem when stems repeat.
    std::vector<std::string> stems;
    for (const auto& file : o.images) stems.push_back(fs::path(file).stem().string());
    auto sorted = stems;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      for (std::size_t f = 0; f < stems.size(); ++f) {
        stems[f] = fs::path(o.images[f]).parent_path().filename().string() + "_" + stems[f];
      }
    }
    for (std::size_t f = 0; f < o.images.size(); ++f) {
      const std::string& file = o.images[f];
      const Tensor3 img = read_rgb(file);
      if (img.height() != params.arch.input_size || img.width() != params.arch.input_size) {
        throw InvalidArgument(file + ": image is " + std::to_string(img.height()) + "x" +
                              std::to_string(img.width()) + ", network expects " +
                              std::to_string(params.arch.input_size));
      }
      const auto cache = net::forward_cached(params, img);
      TapSet acts;
      acts.names = model.layers;
      for (std::size_t s : sel) acts.maps.push_back(cache.taps[s]);
      const auto masks = labels_to_masks(concept_labels(acts, model), model, {img.height(), img.width()});
      write_localization(g.out / stems[f], img, masks, o.lambda);
      done.push_back(stems[f]);
    }
  } else if (o.taps) {
    if (!o.dataset) throw InvalidArgument("localize: --taps needs --dataset");
    const DirectoryTapSource src(*o.taps, Dataset::open(*o.dataset));
    std::vector<std::size_t> idx;
    if (o.images.empty()) {
      for (std::size_t i = 0; i < src.size(); ++i) idx.push_back(i);
    } else {
      for (const auto& id : o.images) {
        std::size_t i = 0;
        while (i < src.size() && src.image_id(i) != id) ++i;
        if (i == src.size()) throw InvalidArgument("unknown image id '" + id + "'");
        idx.push_back(i);
      }
    }
    for (std::size_t i : idx) {
      write_localization(g.out / src.image_id(i), src.image(i), localize(src, model, i), o.lambda);
      done.push_back(src.image_id(i));
    }
  } else {
    throw InvalidArgument("localize: give --checkpoint or --taps");
  }
  write_json(g.out / "localize_report.json",
             {{"config",
               {{"report", o.report.string()},
                {"checkpoint", o.checkpoint ? nlohmann::json(o.checkpoint->string()) : nlohmann::json(nullptr)},
                {"taps", o.taps ? nlohmann::json(o.taps->string()) : nlohmann::json(nullptr)},
                {"lambda", o.lambda}}},
              {"n_concepts", model.n_concepts()},
              {"images", done}});
  g.log("localize: " + std::to_string(done.size()) + " images");
  return 0;
}

// ---------------------------------------------------------------------------
// validate

struct ValidateOptions {
  fs::path dataset;
  std::vector<fs::path> eclad_reports;
  std::vector<fs::path> checkpoints;  // one shared, or one per report
  std::optional<fs::path> taps;
  std::vector<fs::path> concept_dirs;
  std::optional<double> t_dst;
  std::vector<std::string> important;
  bool tcav = false;
  std::size_t overlays = 8;
};

struct ValidationRun {
  std::shared_ptr<const ConceptMaskSource> masks;
  nlohmann::json source;
};

inline std::vector<ValidationRun> validation_sources(const ValidateOptions& o, const Dataset& ds) {
  std::vector<ValidationRun> runs;
  if (!o.eclad_reports.empty()) {
    if (o.checkpoints.empty() == !o.taps.has_value()) {
      throw InvalidArgument("an ECLAD report needs exactly one of --checkpoint or --taps");
    }
    if (o.checkpoints.size() > 1 && o.checkpoints.size() != o.eclad_reports.size()) {
      throw InvalidArgument("give one --checkpoint, or one per --eclad-report");
    }
  }
  for (std::size_t r = 0; r < o.eclad_reports.size(); ++r) {
    TapOptions t{o.dataset, std::nullopt, o.taps};
    if (!o.checkpoints.empty()) t.checkpoint = o.checkpoints[o.checkpoints.size() == 1 ? 0 : r];
    auto src = std::make_shared<EcladMaskSource>(EcladMaskSource::from_report(o.eclad_reports[r], open_taps(t)));
    nlohmann::json j = taps_json(t);
    j["eclad_report"] = o.eclad_reports[r].string();
    runs.push_back({std::move(src), j});
  }
  for (const auto& dir : o.concept_dirs) {
    runs.push_back({std::make_shared<DirectoryMaskSource>(dir, ds, o.tcav),
                    {{"concepts", dir.string()}, {"tcav", o.tcav}}});
  }
  if (runs.empty()) throw InvalidArgument("validate: give --eclad-report and/or --concepts");
  return runs;
}

inline int cmd_validate(const Global& g, const ValidateOptions& o) {
  const Dataset ds = Dataset::open(o.dataset);
  const auto runs = validation_sources(o, ds);
  ValidationConfig cfg;
  cfg.t_dst = o.t_dst;
  if (!o.important.empty()) cfg.important = o.important;
  cfg.overlays_per_concept = o.overlays;

  if (runs.size() == 1) {
    cfg.source = runs[0].source;
    const auto rep = validate_ce(ds, *runs[0].masks, cfg, g.out);
    g.log("validate: rc " + (rep.rc ? fmt(*rep.rc) : "undefined") + ", ic " + (rep.ic ? fmt(*rep.ic) : "undefined"));
    return 0;
  }
  std::vector<CorrectnessReport> reports;
  nlohmann::json per_run = nlohmann::json::array();
  for (std::size_t r = 0; r < runs.size(); ++r) {
    cfg.source = runs[r].source;
    reports.push_back(validate_ce(ds, *runs[r].masks, cfg, g.out / ("run" + std::to_string(r))));
    per_run.push_back({{"run", "run" + std::to_string(r)},
                       {"source", runs[r].source},
                       {"rc", detail::optional_json(reports.back().rc)},
                       {"ic", detail::optional_json(reports.back().ic)}});
  }
  const auto [rc, ic] = pooled_correctness(reports);
  write_json(g.out / "validation_report.json",
             {{"config", reports.front().json.at("config")},
              {"runs", per_run},
              {"pooled", {{"rc", detail::optional_json(rc)}, {"ic", detail::optional_json(ic)}}}});
  g.log("validate: pooled rc " + (rc ? fmt(*rc) : "undefined") + ", ic " + (ic ? fmt(*ic) : "undefined"));
  return 0;
}

// ---------------------------------------------------------------------------
// ablate

struct AblateOptions {
  TapOptions taps;
  std::string axis;
  std::vector<std::string> values;
  EcladConfig eclad;
  std::optional<double> t_dst;
};

inline void apply_axis(EcladConfig& cfg, const std::string& axis, const std::string& value) {
  if (axis == "layers") {
    cfg.layers.clear();
    std::stringstream ss(value);
    for (std::string l; std::getline(ss, l, '+');) {
      if (!l.empty()) cfg.layers.push_back(l);
    }
    if (cfg.layers.empty()) throw InvalidArgument("ablate: empty layer set");
  } else if (axis == "n_c") {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(value, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != value.size() || v == 0) throw InvalidArgument("ablate: bad n_c value '" + value + "'");
    cfg.n_concepts = v;
  } else if (axis == "interp") {
    cfg.mode = parse_upscale_mode(value);
  } else {
    throw InvalidArgument("ablate: unknown axis '" + axis + "' (layers, n_c, interp)");
  }
}

inline int cmd_ablate(const Global& g, AblateOptions o) {
  if (o.values.empty()) throw InvalidArgument("ablate: no values given");
  for (const auto& v : o.values) {
    EcladConfig probe = o.eclad;
    apply_axis(probe, o.axis, v);  // validate every value before any work
  }
  o.eclad.seed = g.seed;
  const auto src = open_taps(o.taps);
  const Dataset ds = Dataset::open(o.taps.dataset);
  std::ostringstream summary;
  std::ostringstream concepts;
  summary << "value,rc,ic,n_aligned,n_concepts\n";
  concepts << "value,concept,importance,nearest_primitive,dst,dst_norm,aligned,coverage\n";
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t k = 0; k < o.values.size(); ++k) {
    const std::string& v = o.values[k];
    EcladConfig cfg = o.eclad;
    apply_axis(cfg, o.axis, v);
    const fs::path dir = g.out / ("value" + std::to_string(k));
    fs::create_directories(dir);
    g.log("ablate: " + o.axis + " = " + v);
    EcladResult res = run_eclad(*src, cfg, dir);
    res.report["source"] = taps_json(o.taps);
    write_json(dir / "eclad_report.json", res.report);
    const EcladMaskSource masks(res.model, res.importance.ri, src);
    ValidationConfig vc;
    vc.t_dst = o.t_dst;
    vc.overlays_per_concept = 0;
    vc.source = {{"ablation_value", v}};
    const auto rep = validate_ce(ds, masks, vc, dir);
    std::size_t aligned = 0;
    for (const auto& a : rep.alignment) aligned += a.aligned ? 1 : 0;
    summary << v << ',' << fmt(rep.rc) << ',' << fmt(rep.ic) << ',' << aligned << ',' << rep.concepts.size() << '\n';
    for (std::size_t c = 0; c < rep.concepts.size(); ++c) {
      const auto& a = rep.alignment[c];
      concepts << v << ',' << rep.concepts[c] << ',' << fmt(rep.importances[c]) << ','
               << rep.primitives[a.nearest] << ',' << fmt(a.dst) << ',' << fmt(a.dst_norm) << ','
               << (a.aligned ? 1 : 0) << ',' << fmt(rep.association.coverage[c]) << '\n';
    }
    rows.push_back({{"value", v},
                    {"dir", dir.filename().string()},
                    {"rc", detail::optional_json(rep.rc)},
                    {"ic", detail::optional_json(rep.ic)},
                    {"n_aligned", aligned}});
  }
  write_text(g.out / "ablation.csv", summary.str());
  write_text(g.out / "ablation_concepts.csv", concepts.str());
  write_json(g.out / "ablation_report.json",
             {{"config",
               {{"axis", o.axis}, {"values", o.values}, {"eclad", o.eclad.to_json()}, {"source", taps_json(o.taps)},
                {"t_dst", o.t_dst ? nlohmann::json(*o.t_dst) : nlohmann::json(nullptr)}}},
              {"rows", rows}});
  return 0;
}

// ---------------------------------------------------------------------------
// metric-study

struct MetricStudyOptions {
  std::string glyph = "A";
  std::string mode = "offset";  // offset | surround
  std::vector<double> values;   // offsets or ring gaps, px
  std::size_t size = 128;
  double height = 48.0;
  double ring_width = 4.0;
};

inline std::vector<double> default_study_values(const std::string& mode) {
  if (mode == "surround") return {0, 4, 8, 16};
  std::vector<double> v;
  for (int o = 0; o <= 64; o += 8) v.push_back(o);
  return v;
}

inline int cmd_metric_study(const Global& g, const MetricStudyOptions& o) {
  const synth::Glyph glyph = synth::parse_glyph(o.glyph);
  std::vector<StudyRow> rows;
  std::string param;
  if (o.mode == "offset") {
    // Start left of centre so the shifted copies stay in frame.
    const Mask2 m = study_glyph(glyph, o.size, o.height, static_cast<double>(o.size) / 4.0);
    std::vector<std::size_t> offsets;
    for (double v : o.values) {
      if (v < 0.0 || v != std::floor(v)) throw InvalidArgument("offsets must be non-negative integers");
      offsets.push_back(static_cast<std::size_t>(v));
    }
    rows = offset_study(m, offsets);
    param = "offset";
  } else if (o.mode == "surround") {
    const Mask2 m = study_glyph(glyph, o.size, o.height, static_cast<double>(o.size) / 2.0);
    rows = surround_study(m, o.values, o.ring_width);
    param = "gap";
  } else {
    throw InvalidArgument("metric-study: unknown mode '" + o.mode + "' (offset, surround)");
  }
  write_text(g.out / "metric_study.csv", study_csv(rows, param));

  const auto column = [&](auto get) {
    std::vector<double> y;
    double mx = 0.0;
    for (const auto& r : rows) {
      y.push_back(get(r));
      mx = std::max(mx, std::abs(y.back()));
    }
    if (mx > 0.0) {
      for (double& v : y) v /= mx;
    }
    return y;
  };
  std::vector<double> x;
  for (const auto& r : rows) x.push_back(r.parameter);
  std::vector<plot::Series> series{
      {"dst", x, column([](const StudyRow& r) { return r.dst; }), plot::kPalette[0]},
      {"dst_norm", x, column([](const StudyRow& r) { return r.dst_norm; }), plot::kPalette[1]},
      {"jaccard", x, column([](const StudyRow& r) { return r.baseline.jaccard; }), plot::kPalette[2]},
      {"nmi", x, column([](const StudyRow& r) { return r.baseline.nmi; }), plot::kPalette[3]},
      {"ari", x, column([](const StudyRow& r) { return r.baseline.ari; }), plot::kPalette[4]}};
  plot::write(g.out / "metric_study.png", series);

  nlohmann::json jrows = nlohmann::json::array();
  for (const auto& r : rows) {
    jrows.push_back({{param, r.parameter},
                     {"dst", r.dst},
                     {"dst_norm", r.dst_norm},
                     {"jaccard", r.baseline.jaccard},
                     {"nmi", r.baseline.nmi},
                     {"ari", r.baseline.ari}});
  }
  write_json(g.out / "metric_study.json",
             {{"config",
               {{"glyph", o.glyph}, {"mode", o.mode}, {"values", o.values}, {"size", o.size}, {"height", o.height},
                {"ring_width", o.ring_width}}},
              {"rows", jrows}});
  g.log("metric-study: " + std::to_string(rows.size()) + " rows");
  return 0;
}

}  // namespace eclad::cli
