// eclad: dataset generation, training, concept extraction and validation.

#include <algorithm>
#include <iostream>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "eclad/cli.hpp"

namespace {

// JSON config: top-level keys set global flags, nested objects set the
// options of the subcommand with that name. Keys may use '_' for '-'.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}\n"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    collect(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void collect(const nlohmann::json& obj, const std::vector<std::string>& parents,
                      std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, v] : obj.items()) {
      std::string name = key;
      std::replace(name.begin(), name.end(), '_', '-');
      if (v.is_object()) {
        auto p = parents;
        p.push_back(name);
        collect(v, p, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = name;
      if (v.is_array()) {
        for (const auto& e : v) item.inputs.push_back(scalar(e));
      } else if (!v.is_null()) {
        item.inputs.push_back(scalar(v));
      }
      items.push_back(std::move(item));
    }
  }
};

}  // namespace

int main(int argc, char** argv) {
  namespace cli = eclad::cli;
  CLI::App app{"ECLAD concept extraction and validation toolkit", "eclad"};
  app.require_subcommand(1);
  app.fallthrough();
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config file (CLI flags take precedence)");

  cli::Global g;
  std::size_t threads = 0;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--threads", threads, "Worker threads (0 = hardware)");
  app.add_flag("--quiet", g.quiet, "Suppress progress messages");

  // gen-data
  cli::GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a built-in synthetic dataset");
  gen_cmd->add_option("name", gen.name, "Dataset name (AB, ABplus, ...)")->required();
  gen_cmd->add_option("--size", gen.size, "Image side in px")->capture_default_str();
  gen_cmd->add_option("--per-class", gen.per_class, "Images per class")->capture_default_str();

  // train
  cli::TrainOptions tr;
  bool no_center = false;
  auto* train_cmd = app.add_subcommand("train", "Train the built-in CNN on a dataset");
  train_cmd->add_option("--dataset", tr.dataset, "Dataset directory")->required();
  train_cmd->add_option("--epochs", tr.hyper.epochs)->capture_default_str();
  train_cmd->add_option("--lr", tr.hyper.lr)->capture_default_str();
  train_cmd->add_option("--momentum", tr.hyper.momentum)->capture_default_str();
  train_cmd->add_option("--batch", tr.hyper.batch)->capture_default_str();
  train_cmd->add_option("--val-fraction", tr.hyper.val_fraction)->capture_default_str();
  train_cmd->add_flag("--no-center", no_center, "Feed raw [0, 1] pixels to the first layer");

  // extract / ablate share the ECLAD parameters
  std::string upscale = "bilinear";
  std::string normalization = "none";
  auto eclad_options = [&](CLI::App* sub, cli::TapOptions& taps, eclad::EcladConfig& cfg, bool with_layers) {
    sub->add_option("--dataset", taps.dataset, "Dataset directory")->required();
    sub->add_option("--checkpoint", taps.checkpoint, "Network checkpoint (model.ectf)");
    sub->add_option("--taps", taps.taps, "Directory of precomputed ECTF taps");
    if (with_layers) sub->add_option("--layers", cfg.layers, "Tap layers (default: all)");
    sub->add_option("--n-concepts", cfg.n_concepts)->capture_default_str();
    sub->add_option("--images-per-batch", cfg.images_per_batch)->capture_default_str();
    sub->add_option("--lambda", cfg.lambda)->capture_default_str();
    sub->add_option("--upscale", upscale, "nearest | bilinear | bicubic")->capture_default_str();
    sub->add_option("--kmeans-epochs", cfg.epochs)->capture_default_str();
    sub->add_option("--normalization", normalization, "none | channel | layer_l2")->capture_default_str();
    sub->add_option("--downscale", cfg.downscale, "Descriptor extent divisor")->capture_default_str();
    sub->add_option("--max-per-class", cfg.max_per_class)->capture_default_str();
    sub->add_option("--examples", cfg.examples_per_concept, "Example images per concept")->capture_default_str();
  };

  cli::ExtractOptions ex;
  auto* extract_cmd = app.add_subcommand("extract", "Run ECLAD over a dataset");
  eclad_options(extract_cmd, ex.taps, ex.eclad, true);

  // localize
  cli::LocalizeOptions loc;
  auto* loc_cmd = app.add_subcommand("localize", "Concept masks and overlays for individual images");
  loc_cmd->add_option("--report", loc.report, "eclad_report.json holding the concept model")->required();
  loc_cmd->add_option("--checkpoint", loc.checkpoint);
  loc_cmd->add_option("--taps", loc.taps);
  loc_cmd->add_option("--dataset", loc.dataset);
  loc_cmd->add_option("--lambda", loc.lambda)->capture_default_str();
  loc_cmd->add_option("images", loc.images, "Image files (--checkpoint) or image ids (--taps)");

  // validate
  cli::ValidateOptions val;
  double t_dst = -1.0;
  auto* val_cmd = app.add_subcommand("validate", "Score concepts against ground-truth primitives");
  val_cmd->add_option("--dataset", val.dataset)->required();
  val_cmd->add_option("--eclad-report", val.eclad_reports, "ECLAD report(s)");
  val_cmd->add_option("--checkpoint", val.checkpoints, "Checkpoint(s) for the ECLAD reports");
  val_cmd->add_option("--taps", val.taps);
  val_cmd->add_option("--concepts", val.concept_dirs, "External concept directories");
  auto* t_opt = val_cmd->add_option("--t-dst", t_dst, "Alignment threshold in px (default scales with size)");
  val_cmd->add_option("--important", val.important, "Important primitive ids (default: manifest)");
  val_cmd->add_option("--overlays", val.overlays, "Overlay images per concept")->capture_default_str();
  val_cmd->add_flag("--tcav", val.tcav, "Importances are TCAV scores in [0, 1]");

  // ablate
  cli::AblateOptions abl;
  double abl_t_dst = -1.0;
  auto* abl_cmd = app.add_subcommand("ablate", "Repeat extraction and validation along one axis");
  eclad_options(abl_cmd, abl.taps, abl.eclad, false);
  abl_cmd->add_option("--axis", abl.axis, "layers | n_c | interp")->required();
  abl_cmd->add_option("--values", abl.values, "Axis values; layer sets joined with '+'")->required();
  auto* abl_t_opt = abl_cmd->add_option("--t-dst", abl_t_dst);
  abl_cmd->add_option("--layers", abl.eclad.layers, "Layers for the n_c and interp axes");

  // metric-study
  cli::MetricStudyOptions ms;
  auto* ms_cmd = app.add_subcommand("metric-study", "DST versus overlap metrics on controlled masks");
  ms_cmd->add_option("--glyph", ms.glyph)->capture_default_str();
  ms_cmd->add_option("--mode", ms.mode, "offset | surround")->capture_default_str();
  auto* values_opt = ms_cmd->add_option("--values", ms.values, "Offsets or ring gaps in px");
  ms_cmd->add_option("--size", ms.size)->capture_default_str();
  ms_cmd->add_option("--height", ms.height, "Glyph height in px")->capture_default_str();
  ms_cmd->add_option("--ring-width", ms.ring_width)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  eclad::set_thread_count(threads > 0 ? threads : std::thread::hardware_concurrency());

  if (gen_cmd->parsed()) return cli::run_guarded(g.out, [&] { cli::cmd_gen_data(g, gen); });
  if (train_cmd->parsed()) {
    tr.center_input = !no_center;
    return cli::run_guarded(g.out, [&] { cli::cmd_train(g, tr); });
  }
  if (extract_cmd->parsed()) {
    return cli::run_guarded(g.out, [&] {
      ex.eclad.mode = eclad::parse_upscale_mode(upscale);
      ex.eclad.normalization = eclad::parse_lad_normalization(normalization);
      cli::cmd_extract(g, ex);
    });
  }
  if (loc_cmd->parsed()) return cli::run_guarded(g.out, [&] { cli::cmd_localize(g, loc); });
  if (val_cmd->parsed()) {
    if (t_opt->count() > 0) val.t_dst = t_dst;
    return cli::run_guarded(g.out, [&] { cli::cmd_validate(g, val); });
  }
  if (abl_cmd->parsed()) {
    if (abl_t_opt->count() > 0) abl.t_dst = abl_t_dst;
    return cli::run_guarded(g.out, [&] {
      abl.eclad.mode = eclad::parse_upscale_mode(upscale);
      abl.eclad.normalization = eclad::parse_lad_normalization(normalization);
      cli::cmd_ablate(g, abl);
    });
  }
  if (ms_cmd->parsed()) {
    if (values_opt->count() == 0) ms.values = cli::default_study_values(ms.mode);
    return cli::run_guarded(g.out, [&] { cli::cmd_metric_study(g, ms); });
  }
  return 1;
}
