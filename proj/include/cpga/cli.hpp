#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cpga/interpret.hpp"
#include "cpga/runconfig.hpp"

namespace cpga::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace detail {

inline data::Dataset load_checked_dataset(const std::string& dir, bool with_stacks = true) {
  data::Dataset ds = data::load_dataset(dir, with_stacks);
  return ds;
}

inline void require_matching_dataset_hash(const json& artifact, const std::string& expect,
                                          const std::string& what) {
  const std::string got = artifact.value("dataset_config_hash", artifact.value("config_hash", ""));
  if (got != expect)
    throw DataError(what + ": dataset config hash " + got + " does not match " + expect);
}

inline std::vector<models::ArchKind> parse_arch_list(const std::string& list_text) {
  std::vector<models::ArchKind> archs;
  if (to_lower(trim(list_text)) == "all") {
    archs.assign(models::kAllArchs.begin(), models::kAllArchs.end());
    return archs;
  }
  for (const auto& a : split(list_text, ','))
    if (!trim(a).empty()) archs.push_back(models::parse_arch(trim(a)));
  if (archs.empty()) throw ConfigError("no architectures requested");
  return archs;
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& list_text) {
  std::vector<std::uint64_t> seeds;
  if (list_text.find(',') == std::string::npos) {
    const int n = std::stoi(list_text);
    if (n < 1) throw ConfigError("need at least one seed");
    for (int i = 0; i < n; ++i) seeds.push_back(static_cast<std::uint64_t>(i));
    return seeds;
  }
  for (const auto& s : split(list_text, ','))
    if (!trim(s).empty()) seeds.push_back(std::stoull(trim(s)));
  return seeds;
}

inline json checkpoint_extra(const RunConfig& cfg, const data::Dataset& ds,
                             const training::TrainConfig& tc, int epoch,
                             const training::MetricsReport& test_metrics) {
  json extra;
  extra["tool_version"] = kToolVersion;
  extra["dataset_config_hash"] = ds.meta.value("config_hash", "");
  extra["train_config_hash"] = tc.hash();
  extra["config_hash"] = cfg.full_hash();
  extra["seed"] = tc.seed;
  extra["epoch"] = epoch;
  extra["metrics"] = {{"pcc", test_metrics.pcc},
                      {"r2", test_metrics.r2},
                      {"mae", test_metrics.mae},
                      {"rmse", test_metrics.rmse}};
  json stats;
  for (std::size_t f = 0; f < data::kFeatureCount; ++f) {
    stats[data::kFeatureNames[f]] = {{"mean", ds.stats.mean[f]},
                                     {"std", ds.stats.stddev[f]},
                                     {"median", ds.stats.median[f]},
                                     {"constant", ds.stats.constant[f]}};
  }
  extra["feature_stats"] = stats;
  extra["feature_stats_scope"] = hex64(ds.stats.fit_scope_hash);
  return extra;
}

inline std::array<float, 6> standardized_input(const data::SampleRecord& rec,
                                               const data::FeatureStats& stats) {
  const auto z = data::standardize(rec.numeric, stats);
  std::array<float, 6> zf;
  for (std::size_t i = 0; i < 6; ++i) zf[i] = static_cast<float>(z[i]);
  return zf;
}

}  // namespace detail

// ---------------------------------------------------------------- dataset

inline int cmd_dataset_build(const RunConfig& cfg, const std::string& out, bool dry_run,
                             bool pngs) {
  data::DatasetParams params = cfg.dataset_params(out);
  params.write_layer_pngs = pngs;
  const auto grid = data::build_design_grid(params.grid);
  if (dry_run) {
    std::cout << "planned records: " << grid.size() << "\n";
    return 0;
  }
  if (out.empty()) throw ConfigError("dataset build requires --out");
  const data::DatasetSummary s = data::build_dataset(params);
  std::cout << "dataset: " << s.records << " records -> " << out << " (train " << s.train
            << ", val " << s.val << ", test " << s.test << ")\n";
  std::cout << "config hash: " << params.config_hash << "\n";
  return 0;
}

// ------------------------------------------------------------------ train

inline int cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& ckpt,
                     const std::string& report_path) {
  const data::Dataset ds = detail::load_checked_dataset(data_dir);
  const training::TrainView view = training::make_train_view(ds);
  const training::TrainConfig tc = cfg.train_config();
  std::cerr << "training " << models::arch_name(tc.arch) << " (seed " << tc.seed << ", "
            << tc.epochs << " epochs, " << view.train.size() << " samples)\n";
  training::TrainResult result = training::train(tc, view);
  const training::MetricsReport val = training::evaluate(result.model, view, "val");
  const training::MetricsReport test = training::evaluate(result.model, view, "test");
  std::cout << "val:  pcc " << format_double(val.pcc) << "  r2 " << format_double(val.r2)
            << "  mae " << format_double(val.mae) << "  rmse " << format_double(val.rmse) << "\n";
  std::cout << "test: pcc " << format_double(test.pcc) << "  r2 " << format_double(test.r2)
            << "  mae " << format_double(test.mae) << "  rmse " << format_double(test.rmse)
            << "\n";

  if (!ckpt.empty()) {
    const json extra = detail::checkpoint_extra(cfg, ds, tc, result.history.best_epoch, test);
    models::save_checkpoint(result.model, ckpt, extra);
    std::cerr << "checkpoint: " << ckpt << "\n";
  }
  if (!report_path.empty()) {
    json rep;
    rep["tool_version"] = kToolVersion;
    rep["dataset_config_hash"] = ds.meta.value("config_hash", "");
    rep["train_config_hash"] = tc.hash();
    rep["seed"] = tc.seed;
    rep["arch"] = models::arch_name(tc.arch);
    rep["history"] = result.history.to_json()["history"];
    rep["best_epoch"] = result.history.best_epoch;
    rep["val"] = val.to_json();
    rep["test"] = test.to_json();
    write_text_file(report_path, rep.dump(2) + "\n");

    std::string curves = "epoch,train_loss,val_loss\n";
    for (std::size_t e = 0; e < result.history.train_loss.size(); ++e) {
      curves += std::to_string(e) + "," + format_double(result.history.train_loss[e]) + "," +
                format_double(result.history.val_loss[e]) + "\n";
    }
    write_text_file(report_path + ".curves.csv", curves);
  }
  return 0;
}

// ------------------------------------------------------------------- eval

inline int cmd_eval(const RunConfig&, const std::string& ckpt_path, const std::string& data_dir,
                    const std::string& split, const std::string& out_path) {
  const data::Dataset ds = detail::load_checked_dataset(data_dir);
  auto [model, meta] = models::load_checkpoint<float>(ckpt_path);
  detail::require_matching_dataset_hash(meta, ds.meta.value("config_hash", ""), "checkpoint");
  const training::TrainView view = training::make_train_view(ds);
  const training::MetricsReport m = training::evaluate(model, view, split);
  json rep = m.to_json();
  rep["split"] = split;
  rep["arch"] = meta.value("arch", "");
  rep["tool_version"] = kToolVersion;
  rep["dataset_config_hash"] = ds.meta.value("config_hash", "");
  rep["train_config_hash"] = meta.value("train_config_hash", "");
  rep["seed"] = meta.value("seed", 0ull);
  std::cout << "eval " << split << ": pcc " << format_double(m.pcc) << "  r2 "
            << format_double(m.r2) << "  mae " << format_double(m.mae) << "  rmse "
            << format_double(m.rmse) << "\n";
  if (!out_path.empty()) write_text_file(out_path, rep.dump(2) + "\n");
  return 0;
}

// ----------------------------------------------------------------- ablate

inline int cmd_ablate(const RunConfig& cfg, const std::string& data_dir,
                      const std::string& archs_spec, const std::string& seeds_spec,
                      const std::string& out_dir) {
  const data::Dataset ds = detail::load_checked_dataset(data_dir);
  const training::TrainView view = training::make_train_view(ds);
  const auto archs = detail::parse_arch_list(archs_spec);
  const auto seeds = detail::parse_seed_list(seeds_spec);
  fs::create_directories(out_dir);

  const training::TrainConfig base = cfg.train_config();
  training::AblationReport report = training::ablate(
      view, archs, seeds, base,
      [&](const training::AblationRow& row, training::TrainResult& result) {
        std::cerr << row.arch << " seed " << row.seed << ": r2 " << format_double(row.r2)
                  << ", rmse " << format_double(row.rmse) << "\n";
        training::TrainConfig tc = base;
        tc.arch = models::parse_arch(row.arch);
        tc.seed = row.seed;
        training::MetricsReport test;
        test.pcc = row.pcc;
        test.r2 = row.r2;
        test.mae = row.mae;
        test.rmse = row.rmse;
        const json extra = detail::checkpoint_extra(cfg, ds, tc, row.best_epoch, test);
        models::save_checkpoint(result.model,
                                (fs::path(out_dir) / (row.arch + "_s" + std::to_string(row.seed) +
                                                      ".ckpt"))
                                    .string(),
                                extra);
      });

  json j = report.to_json();
  j["dataset_config_hash"] = ds.meta.value("config_hash", "");
  j["train_base_config"] = base.hash();
  write_text_file((fs::path(out_dir) / "ablation.json").string(), j.dump(2) + "\n");
  write_text_file((fs::path(out_dir) / "ablation.csv").string(), report.to_csv());
  std::cout << "ablation table: " << (fs::path(out_dir) / "ablation.json").string() << "\n";
  for (const auto& arch : archs)
    std::cout << models::arch_name(arch) << " mean r2: "
              << format_double(report.mean_r2(models::arch_name(arch))) << "\n";
  return 0;
}

// -------------------------------------------------------------- interpret

inline int cmd_interpret_saliency(const RunConfig& cfg, const std::string& ckpt_path,
                                  const std::string& data_dir, const std::string& id,
                                  const std::string& out_base) {
  const data::Dataset ds = detail::load_checked_dataset(data_dir);
  auto [model, meta] = models::load_checkpoint<float>(ckpt_path);
  detail::require_matching_dataset_hash(meta, ds.meta.value("config_hash", ""), "checkpoint");
  const auto& rec = ds.by_id(id);
  const auto z = detail::standardized_input(rec, ds.stats);
  const Tensor<float> orig = training::stack_to_tensor(rec.stack_orig);
  const Tensor<float> conv = training::stack_to_tensor(rec.stack_conv);
  models::ModelInput<float> in;
  if (models::arch_uses_numeric(model.cfg.arch)) in.numeric = &z;
  in.orig = &orig;
  in.conv = &conv;
  const bool transformed = cfg.get_bool("interpret.transformed_modality");
  const interpret::SaliencyMap map = interpret::saliency(model, in, id, transformed);
  interpret::write_volume_f32(map.values.v, model.cfg.depth, model.cfg.height, model.cfg.width,
                              out_base);
  interpret::write_map_slices_png(map.values.v, model.cfg.depth, model.cfg.height,
                                  model.cfg.width, out_base);
  json j;
  j["id"] = id;
  j["arch"] = map.arch;
  j["all_zero"] = map.all_zero;
  j["modality"] = transformed ? "transformed" : "original";
  j["dataset_config_hash"] = ds.meta.value("config_hash", "");
  j["seed"] = meta.value("seed", 0ull);
  j["tool_version"] = kToolVersion;
  write_text_file(out_base + ".json", j.dump(2) + "\n");
  std::cout << "saliency map: " << out_base << ".f32\n";
  return 0;
}

inline int cmd_interpret_occlusion(const RunConfig& cfg, const std::string& ckpt_path,
                                   const std::string& data_dir, const std::string& id,
                                   const std::string& out_base) {
  const data::Dataset ds = detail::load_checked_dataset(data_dir);
  auto [model, meta] = models::load_checkpoint<float>(ckpt_path);
  detail::require_matching_dataset_hash(meta, ds.meta.value("config_hash", ""), "checkpoint");
  const auto& rec = ds.by_id(id);
  const auto z = detail::standardized_input(rec, ds.stats);
  const Tensor<float> orig = training::stack_to_tensor(rec.stack_orig);
  const Tensor<float> conv = training::stack_to_tensor(rec.stack_conv);
  const int patch = cfg.get_int("interpret.patch");
  const int stride = cfg.get_int("interpret.stride");
  const float fill = static_cast<float>(cfg.get_double("interpret.fill"));
  const interpret::OcclusionMap map =
      interpret::occlusion_map(model, z, orig, conv, patch, stride, fill);
  const double contrast = interpret::solid_void_contrast(map, orig);

  std::vector<float> vol(map.values.begin(), map.values.end());
  interpret::write_volume_f32(vol, map.depth, map.ny, map.nx, out_base);
  interpret::write_map_slices_png(vol, map.depth, map.ny, map.nx, out_base);
  json j;
  j["id"] = id;
  j["patch"] = map.patch;
  j["stride"] = map.stride;
  j["fill"] = map.fill;
  j["base_pred"] = map.base_pred;
  j["solid_void_contrast"] = contrast;
  j["dataset_config_hash"] = ds.meta.value("config_hash", "");
  j["seed"] = meta.value("seed", 0ull);
  j["tool_version"] = kToolVersion;
  write_text_file(out_base + ".json", j.dump(2) + "\n");
  std::cout << "occlusion map: " << out_base << ".f32 (solid/void contrast "
            << format_double(contrast) << ")\n";
  return 0;
}

inline int cmd_interpret_errmap(const RunConfig&, const std::string& eval_report,
                                const std::string& data_dir, const std::string& out_dir) {
  const data::Dataset ds = detail::load_checked_dataset(data_dir, false);
  const json rep = json::parse(read_text_file(eval_report));
  detail::require_matching_dataset_hash(rep, ds.meta.value("config_hash", ""), "eval report");
  std::vector<training::Residual> residuals;
  for (const auto& r : rep.at("residuals")) {
    residuals.push_back({r.at("id").get<std::string>(), r.at("target").get<double>(),
                         r.at("pred").get<double>()});
  }
  fs::create_directories(out_dir);
  for (const auto& pair : interpret::default_error_pairs()) {
    const auto pts = interpret::error_map(ds, residuals, pair);
    const std::string name = std::string("errmap_") +
                             data::kFeatureNames[static_cast<std::size_t>(pair.feature_a)] +
                             "_vs_" +
                             data::kFeatureNames[static_cast<std::size_t>(pair.feature_b)] +
                             ".csv";
    write_text_file((fs::path(out_dir) / name).string(), interpret::error_map_csv(pts, pair));
    std::cout << "error map: " << (fs::path(out_dir) / name).string() << "\n";
  }
  return 0;
}

inline int cmd_interpret_gamma(const RunConfig&, const std::string& ckpt_path,
                               const std::string& data_dir, const std::string& split,
                               const std::string& out_path) {
  const data::Dataset ds = detail::load_checked_dataset(data_dir, false);
  auto [model, meta] = models::load_checkpoint<float>(ckpt_path);
  detail::require_matching_dataset_hash(meta, ds.meta.value("config_hash", ""), "checkpoint");
  const std::vector<std::string>* ids = nullptr;
  if (split == "train") ids = &ds.splits.train;
  else if (split == "val") ids = &ds.splits.val;
  else if (split == "test") ids = &ds.splits.test;
  else throw ConfigError("unknown split: " + split);

  std::vector<std::array<float, 6>> zs;
  for (const auto& id : *ids) zs.push_back(detail::standardized_input(ds.by_id(id), ds.stats));
  const interpret::GammaReport rep = interpret::gamma_analysis(model, zs);
  json j = rep.to_json();
  j["split"] = split;
  j["dataset_config_hash"] = ds.meta.value("config_hash", "");
  j["seed"] = meta.value("seed", 0ull);
  j["tool_version"] = kToolVersion;
  if (!out_path.empty()) write_text_file(out_path, j.dump(2) + "\n");
  for (const auto& f : rep.features)
    std::cout << f.label << ": r = " << format_double(f.r) << "\n";
  return 0;
}

// ----------------------------------------------------------------- report

inline int cmd_report(const RunConfig&, const std::string& ablation_path,
                      const std::vector<std::string>& eval_paths, const std::string& gamma_path,
                      const std::string& data_dir, const std::string& out_dir) {
  const data::Dataset ds = detail::load_checked_dataset(data_dir, false);
  const std::string expect = ds.meta.value("config_hash", "");
  fs::create_directories(out_dir);

  std::string md = "# Run report\n\n";
  md += "dataset config hash: " + expect + "\n\n";

  if (!ablation_path.empty()) {
    const json ab = json::parse(read_text_file(ablation_path));
    detail::require_matching_dataset_hash(ab, expect, "ablation table");
    md += "## Architecture comparison (test split)\n\n";
    md += "| arch | pcc | r2 | mae | rmse |\n|---|---|---|---|---|\n";
    for (auto it = ab.at("mean_by_arch").begin(); it != ab.at("mean_by_arch").end(); ++it) {
      const json& v = it.value();
      md += "| " + it.key() + " | " + format_double(v.at("pcc").get<double>()) + " | " +
            format_double(v.at("r2").get<double>()) + " | " +
            format_double(v.at("mae").get<double>()) + " | " +
            format_double(v.at("rmse").get<double>()) + " |\n";
    }
    md += "\n";
  }

  for (const auto& eval_path : eval_paths) {
    const json rep = json::parse(read_text_file(eval_path));
    detail::require_matching_dataset_hash(rep, expect, "eval report " + eval_path);
    std::vector<training::Residual> residuals;
    for (const auto& r : rep.at("residuals"))
      residuals.push_back({r.at("id").get<std::string>(), r.at("target").get<double>(),
                           r.at("pred").get<double>()});
    const std::string tag = rep.value("arch", "model");
    for (const auto& pair : interpret::default_error_pairs()) {
      const auto pts = interpret::error_map(ds, residuals, pair);
      const std::string name = "errmap_" + tag + "_" +
                               data::kFeatureNames[static_cast<std::size_t>(pair.feature_a)] +
                               "_vs_" +
                               data::kFeatureNames[static_cast<std::size_t>(pair.feature_b)] +
                               ".csv";
      write_text_file((fs::path(out_dir) / name).string(), interpret::error_map_csv(pts, pair));
    }
    md += "## Error maps: " + tag + "\n\nwritten as errmap_" + tag + "_*.csv\n\n";
  }

  if (!gamma_path.empty()) {
    const json g = json::parse(read_text_file(gamma_path));
    detail::require_matching_dataset_hash(g, expect, "gamma report");
    md += "## Learned gating correlations (" + g.value("arch", "") + ")\n\n";
    md += "| feature | r |\n|---|---|\n";
    for (const auto& f : g.at("features")) {
      md += "| " + f.at("label").get<std::string>() + " | " +
            format_double(f.at("r").get<double>()) + " |\n";
    }
    md += "\n";
  }

  write_text_file((fs::path(out_dir) / "report.md").string(), md);
  std::cout << "report: " << (fs::path(out_dir) / "report.md").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- lattice

inline int cmd_lattice_export(const RunConfig& cfg, const std::string& geometry, int unit_cells,
                              double offset_c, const std::string& mode_name,
                              const std::string& out_base, bool close_boundary) {
  lattice::LatticeConfig lc;
  lc.geometry = lattice::parse_geometry(geometry);
  lc.unit_cells = unit_cells;
  lc.offset_c = offset_c;
  lc.mode = to_lower(trim(mode_name)) == "skeletal" ? lattice::SolidMode::Skeletal
                                                    : lattice::SolidMode::Sheet;
  lc.grid_resolution = cfg.get_int("lattice.grid_resolution");
  lc.domain_size = cfg.get_double("lattice.domain_size");
  const lattice::ScalarField field = lattice::level_set_field(lc);

  lattice::TriMesh mesh;
  if (lc.mode == lattice::SolidMode::Sheet) {
    mesh = lattice::marching_cubes(field, offset_c, close_boundary);
  } else {
    mesh = lattice::marching_cubes_core(
        field.nx, field.ny, field.nz, field.spacing,
        [&](int i, int j, int k) { return offset_c - field.at(i, j, k); }, close_boundary);
  }
  if (mesh.empty()) std::cerr << "warning: empty surface (all-solid or all-void)\n";
  lattice::write_stl_ascii(mesh, out_base + ".stl", geometry);
  const lattice::OccupancyGrid occ = lattice::solidify(field, offset_c, lc.mode);
  lattice::write_occupancy_raw(occ, out_base);
  const lattice::GeomMetrics m = lattice::lattice_metrics(field, offset_c, lc.mode);
  std::cout << "mesh: " << out_base << ".stl (" << mesh.triangles.size() << " triangles)\n";
  std::cout << "occupancy: " << out_base << ".u8\n";
  std::cout << "surface_area_mm2 " << format_double(m.surface_area) << "  solid_volume_mm3 "
            << format_double(m.solid_volume) << "  porosity " << format_double(m.porosity)
            << "  sa_to_v " << format_double(m.sa_to_v) << "\n";
  return 0;
}

// --------------------------------------------------------------- describe

inline int cmd_describe(const std::string& arch, int depth, int height, int width) {
  models::ModelConfig cfg;
  cfg.arch = models::parse_arch(arch);
  cfg.depth = depth;
  cfg.height = height;
  cfg.width = width;
  models::Model<float> m(cfg);
  std::cout << m.describe();
  std::cout << "total parameters: " << m.param_count() << "\n";
  return 0;
}

// ------------------------------------------------------------- entry point

inline int run_cli(std::vector<std::string> args) {
  CLI::App app{"TPMS lattice conversion pipeline: dataset synthesis, gated multimodal "
               "training, and interpretability tooling"};
  app.fallthrough(true);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string describe_arch;
  app.add_option("--config", config_path, "run configuration file");
  app.add_option("--set", overrides, "override a config key, section.key=value")
      ->take_all();
  app.add_option("--describe", describe_arch, "print the layer table of an architecture");

  // dataset build
  auto* dataset = app.add_subcommand("dataset", "dataset synthesis");
  auto* build = dataset->add_subcommand("build", "generate the design grid");
  std::string ds_out;
  bool dry_run = false, pngs = false;
  std::optional<int> res, px, depth_layers;
  std::optional<double> domain, alpha;
  std::optional<std::uint64_t> ds_seed;
  std::optional<std::string> preset;
  build->add_option("--out", ds_out, "output directory");
  build->add_option("--res", res, "lattice grid resolution");
  build->add_option("--px", px, "stack width/height in pixels");
  build->add_option("--depth", depth_layers, "stack depth after resampling");
  build->add_option("--domain", domain, "cube edge in mm");
  build->add_option("--seed", ds_seed, "dataset seed");
  build->add_option("--preset", preset, "optics preset name");
  build->add_option("--alpha", alpha, "diffusion subtraction strength");
  build->add_flag("--dry-run", dry_run, "print the planned record count and exit");
  build->add_flag("--pngs", pngs, "export mid-layer previews");

  // train
  auto* train_cmd = app.add_subcommand("train", "train one architecture");
  std::string tr_data, tr_ckpt, tr_report;
  std::optional<std::string> tr_arch;
  std::optional<int> tr_epochs, tr_batch;
  std::optional<std::uint64_t> tr_seed;
  std::optional<double> tr_lr;
  train_cmd->add_option("--data", tr_data, "dataset directory")->required();
  train_cmd->add_option("--arch", tr_arch, "architecture name");
  train_cmd->add_option("--seed", tr_seed, "training seed");
  train_cmd->add_option("--epochs", tr_epochs, "epoch count");
  train_cmd->add_option("--batch", tr_batch, "batch size");
  train_cmd->add_option("--lr", tr_lr, "base learning rate");
  train_cmd->add_option("--ckpt", tr_ckpt, "checkpoint output path");
  train_cmd->add_option("--report", tr_report, "training report JSON path");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_split = "test", ev_out;
  eval_cmd->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--data", ev_data, "dataset directory")->required();
  eval_cmd->add_option("--split", ev_split, "train|val|test");
  eval_cmd->add_option("--out", ev_out, "metrics JSON path");

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "architecture comparison");
  std::string ab_data, ab_archs = "all", ab_seeds = "3", ab_out = "ablation";
  std::optional<int> ab_epochs;
  std::optional<int> ab_batch;
  ablate_cmd->add_option("--data", ab_data, "dataset directory")->required();
  ablate_cmd->add_option("--archs", ab_archs, "comma list or 'all'");
  ablate_cmd->add_option("--seeds", ab_seeds, "seed count or comma list");
  ablate_cmd->add_option("--epochs", ab_epochs, "epoch count");
  ablate_cmd->add_option("--batch", ab_batch, "batch size");
  ablate_cmd->add_option("--out", ab_out, "output directory");

  // interpret
  auto* interp = app.add_subcommand("interpret", "interpretability tools");
  auto* sal = interp->add_subcommand("saliency", "input-gradient map");
  auto* occ = interp->add_subcommand("occlusion", "patch perturbation map");
  auto* errm = interp->add_subcommand("errmap", "parameter-space error maps");
  auto* gam = interp->add_subcommand("gamma", "gating correlation analysis");
  std::string in_ckpt, in_data, in_id, in_out, in_eval, in_split = "test";
  std::optional<int> in_patch, in_stride;
  std::optional<double> in_fill;
  bool in_transformed = false;
  for (auto* sub : {sal, occ}) {
    sub->add_option("--ckpt", in_ckpt, "checkpoint path")->required();
    sub->add_option("--data", in_data, "dataset directory")->required();
    sub->add_option("--id", in_id, "record id")->required();
    sub->add_option("--out", in_out, "output path base")->required();
  }
  sal->add_flag("--transformed", in_transformed, "attribute the transformed modality");
  occ->add_option("--patch", in_patch, "patch side in pixels");
  occ->add_option("--stride", in_stride, "patch stride");
  occ->add_option("--fill", in_fill, "fill value");
  errm->add_option("--eval", in_eval, "eval report JSON")->required();
  errm->add_option("--data", in_data, "dataset directory")->required();
  errm->add_option("--out", in_out, "output directory")->required();
  gam->add_option("--ckpt", in_ckpt, "checkpoint path")->required();
  gam->add_option("--data", in_data, "dataset directory")->required();
  gam->add_option("--split", in_split, "train|val|test");
  gam->add_option("--out", in_out, "report JSON path");

  // report
  auto* report_cmd = app.add_subcommand("report", "assemble a run report");
  std::string rp_ablation, rp_gamma, rp_data, rp_out = "report";
  std::vector<std::string> rp_evals;
  report_cmd->add_option("--ablation", rp_ablation, "ablation.json");
  report_cmd->add_option("--eval", rp_evals, "eval report JSONs")->take_all();
  report_cmd->add_option("--gamma", rp_gamma, "gamma report JSON");
  report_cmd->add_option("--data", rp_data, "dataset directory")->required();
  report_cmd->add_option("--out", rp_out, "output directory");

  // lattice export
  auto* lattice_cmd = app.add_subcommand("lattice", "lattice geometry tools");
  auto* lat_export = lattice_cmd->add_subcommand("export", "mesh and occupancy export");
  std::string lx_geometry, lx_mode = "sheet", lx_out;
  int lx_cells = 2;
  double lx_offset = 0.3;
  bool lx_close = false;
  lat_export->add_option("--geometry", lx_geometry, "lattice kind")->required();
  lat_export->add_option("--cells", lx_cells, "periods per edge");
  lat_export->add_option("--offset", lx_offset, "level-set offset");
  lat_export->add_option("--mode", lx_mode, "sheet|skeletal");
  lat_export->add_option("--out", lx_out, "output path base")->required();
  lat_export->add_flag("--close-boundary", lx_close, "cap the surface at the domain faces");

  // describe
  auto* describe_cmd = app.add_subcommand("describe", "print a layer table");
  std::string de_arch;
  int de_depth = 32, de_height = 32, de_width = 32;
  describe_cmd->add_option("arch", de_arch, "architecture name")->required();
  describe_cmd->add_option("--depth", de_depth, "input depth");
  describe_cmd->add_option("--height", de_height, "input height");
  describe_cmd->add_option("--width", de_width, "input width");

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& ov : overrides) {
      const std::size_t eq = ov.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects section.key=value");
      cfg.set(to_lower(trim(ov.substr(0, eq))), trim(ov.substr(eq + 1)));
    }

    if (!describe_arch.empty()) return cmd_describe(describe_arch, 32, 32, 32);

    if (build->parsed()) {
      if (res) cfg.set("lattice.grid_resolution", std::to_string(*res));
      if (domain) cfg.set("lattice.domain_size", format_double(*domain));
      if (px) cfg.set("dataset.out_px", std::to_string(*px));
      if (depth_layers) cfg.set("dataset.depth_layers", std::to_string(*depth_layers));
      if (ds_seed) cfg.set("dataset.seed", std::to_string(*ds_seed));
      if (preset) cfg.set("optics.preset", *preset);
      if (alpha) cfg.set("optics.alpha_diffusion", format_double(*alpha));
      return cmd_dataset_build(cfg, ds_out, dry_run, pngs);
    }
    if (train_cmd->parsed()) {
      if (tr_arch) cfg.set("train.arch", *tr_arch);
      if (tr_seed) cfg.set("train.seed", std::to_string(*tr_seed));
      if (tr_epochs) cfg.set("train.epochs", std::to_string(*tr_epochs));
      if (tr_batch) cfg.set("train.batch_size", std::to_string(*tr_batch));
      if (tr_lr) cfg.set("train.base_lr", format_double(*tr_lr));
      return cmd_train(cfg, tr_data, tr_ckpt, tr_report);
    }
    if (eval_cmd->parsed()) return cmd_eval(cfg, ev_ckpt, ev_data, ev_split, ev_out);
    if (ablate_cmd->parsed()) {
      if (ab_epochs) cfg.set("train.epochs", std::to_string(*ab_epochs));
      if (ab_batch) cfg.set("train.batch_size", std::to_string(*ab_batch));
      return cmd_ablate(cfg, ab_data, ab_archs, ab_seeds, ab_out);
    }
    if (sal->parsed()) {
      if (in_transformed) cfg.set("interpret.transformed_modality", "true");
      return cmd_interpret_saliency(cfg, in_ckpt, in_data, in_id, in_out);
    }
    if (occ->parsed()) {
      if (in_patch) cfg.set("interpret.patch", std::to_string(*in_patch));
      if (in_stride) cfg.set("interpret.stride", std::to_string(*in_stride));
      if (in_fill) cfg.set("interpret.fill", format_double(*in_fill));
      return cmd_interpret_occlusion(cfg, in_ckpt, in_data, in_id, in_out);
    }
    if (errm->parsed()) return cmd_interpret_errmap(cfg, in_eval, in_data, in_out);
    if (gam->parsed()) return cmd_interpret_gamma(cfg, in_ckpt, in_data, in_split, in_out);
    if (lat_export->parsed())
      return cmd_lattice_export(cfg, lx_geometry, lx_cells, lx_offset, lx_mode, lx_out, lx_close);
    if (report_cmd->parsed())
      return cmd_report(cfg, rp_ablation, rp_evals, rp_gamma, rp_data, rp_out);
    if (describe_cmd->parsed()) return cmd_describe(de_arch, de_depth, de_height, de_width);

    std::cout << app.help();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  }
}

inline int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 0; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(std::move(args));
}

}  // namespace cpga::cli
