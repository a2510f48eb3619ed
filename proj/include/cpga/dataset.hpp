#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpga/common.hpp"
#include "cpga/geometry.hpp"
#include "cpga/geometry_metrics.hpp"
#include "cpga/image.hpp"
#include "cpga/optics.hpp"

namespace cpga::data {

using json = nlohmann::json;

// ---------------------------------------------------------------- features

inline constexpr int kFeatureCount = 6;
inline constexpr std::array<const char*, kFeatureCount> kFeatureNames = {
    "sa_to_v", "void_ratio", "lattice_n", "solid_volume", "layer_height", "max_intensity"};

/// The six numeric model inputs, in fixed order. NaN marks a missing value.
struct NumericFeatures {
  std::array<double, kFeatureCount> v = {0, 0, 0, 0, 0, 0};

  double& sa_to_v() { return v[0]; }
  double& void_ratio() { return v[1]; }
  double& lattice_n() { return v[2]; }
  double& solid_volume() { return v[3]; }
  double& layer_height() { return v[4]; }
  double& max_intensity() { return v[5]; }
  double sa_to_v() const { return v[0]; }
  double void_ratio() const { return v[1]; }
  double lattice_n() const { return v[2]; }
  double solid_volume() const { return v[3]; }
  double layer_height() const { return v[4]; }
  double max_intensity() const { return v[5]; }
};

// ------------------------------------------------------------ design grid

struct GridEntry {
  std::string id;
  lattice::GeometryKind geometry = lattice::GeometryKind::Primitive;
  int unit_cells = 1;
  double offset_c = 0.0;
  double layer_height = 0.0;  // mm
  int irradiance_pos = 0;     // radial position index on the build plate
};

struct GridOptions {
  std::vector<lattice::GeometryKind> geometries{lattice::kAllGeometries.begin(),
                                                lattice::kAllGeometries.end()};
  std::vector<int> unit_cells{1, 2, 3, 4};
  /// Three offsets per geometry; empty means lo/mid/hi of the printable window.
  std::map<lattice::GeometryKind, std::vector<double>> offsets;
  std::vector<double> layer_heights{0.05, 0.10, 0.15};
  std::vector<double> irradiance_levels{1.0, 0.85, 0.70};

  std::vector<double> offsets_for(lattice::GeometryKind g) const {
    auto it = offsets.find(g);
    if (it != offsets.end()) return it->second;
    const auto w = lattice::default_offset_window(g);
    return {w.lo, 0.5 * (w.lo + w.hi), w.hi};
  }
};

/// Cartesian product: geometries x unit cells x offsets x layer heights x
/// irradiance positions. The default options enumerate 648 entries.
inline std::vector<GridEntry> build_design_grid(const GridOptions& options = {}) {
  std::vector<GridEntry> grid;
  for (auto g : options.geometries) {
    const auto offsets = options.offsets_for(g);
    for (int n : options.unit_cells) {
      for (std::size_t ci = 0; ci < offsets.size(); ++ci) {
        for (std::size_t hi = 0; hi < options.layer_heights.size(); ++hi) {
          for (std::size_t ii = 0; ii < options.irradiance_levels.size(); ++ii) {
            GridEntry e;
            e.geometry = g;
            e.unit_cells = n;
            e.offset_c = offsets[ci];
            e.layer_height = options.layer_heights[hi];
            e.irradiance_pos = static_cast<int>(ii);
            e.id = std::string(lattice::geometry_name(g)) + "-n" + std::to_string(n) + "-c" +
                   std::to_string(ci) + "-h" + std::to_string(hi) + "-i" + std::to_string(ii);
            grid.push_back(std::move(e));
          }
        }
      }
    }
  }
  return grid;
}

// ------------------------------------------------------------ target oracle

/// Synthetic conversion target. This is a declared stand-in for the
/// experimental measurement: a fixed formula over interface activity
/// (image-only information) and three process features, plus seeded noise.
/// It is not experimental truth.
inline double synth_doc_value(double interface_activity, double h_norm, double i_norm,
                              double void_ratio, double eps) {
  const double raw = 0.95 - 0.20 * interface_activity - 0.06 * h_norm + 0.04 * i_norm -
                     0.03 * void_ratio + eps;
  return std::min(0.95, std::max(0.67, raw));
}

/// Mean absolute per-voxel difference between the two modalities.
inline double interface_activity(const optics::ProjectionStack& original,
                                 const optics::ProjectionStack& transformed) {
  if (original.depth() != transformed.depth() || original.width() != transformed.width() ||
      original.height() != transformed.height())
    throw DataError("interface_activity: stack shapes differ");
  double acc = 0.0;
  std::size_t n = 0;
  for (int l = 0; l < original.depth(); ++l) {
    const auto& a = original.layers[static_cast<std::size_t>(l)];
    const auto& b = transformed.layers[static_cast<std::size_t>(l)];
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(double(a.v[i]) - double(b.v[i]));
    n += a.size();
  }
  return n ? acc / static_cast<double>(n) : 0.0;
}

inline double synth_doc_oracle(const NumericFeatures& numeric, double interface_act, double i_max,
                               std::uint64_t seed, const std::string& record_id) {
  const double h_norm = (numeric.layer_height() - 0.05) / 0.10;
  const double i_norm = i_max > 0 ? numeric.max_intensity() / i_max : 0.0;
  Rng rng = Rng::derive(seed, record_id + "/doc");
  const double eps = rng.normal(0.0, 0.005);
  return synth_doc_value(interface_act, h_norm, i_norm, numeric.void_ratio(), eps);
}

// ----------------------------------------------------------------- splits

struct SplitManifest {
  std::vector<std::string> train, val, test;
  std::uint64_t seed = 0;

  std::size_t total() const { return train.size() + val.size() + test.size(); }
};

/// Shuffle, then peel off 20% for test and 20% of the remainder for
/// validation (648 -> 414/104/130).
inline SplitManifest split_ids(std::vector<std::string> ids, std::uint64_t seed) {
  SplitManifest m;
  m.seed = seed;
  Rng rng = Rng::derive(seed, "split");
  rng.shuffle(ids);
  const std::size_t n = ids.size();
  const std::size_t n_test = (n + 4) / 5;             // ceil(n/5)
  const std::size_t n_val = (n - n_test + 4) / 5;     // ceil of 20% of remainder
  m.test.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
  m.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_test),
               ids.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
  m.train.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), ids.end());
  return m;
}

// ------------------------------------------------------------------ stats

struct FeatureStats {
  std::array<double, kFeatureCount> mean{}, stddev{}, median{};
  std::array<bool, kFeatureCount> constant{};
  std::uint64_t fit_scope_hash = 0;  // hash of the sorted id set the stats were fit on
};

inline std::uint64_t id_set_hash(std::vector<std::string> ids) {
  std::sort(ids.begin(), ids.end());
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& id : ids) {
    h = fnv1a64(id, h);
    h = fnv1a64("|", h);
  }
  return h;
}

/// Plain statistics over a feature list (no scope checking; see fit_stats).
inline FeatureStats compute_stats(const std::vector<NumericFeatures>& rows) {
  if (rows.empty()) throw DataError("compute_stats: empty feature list");
  FeatureStats s;
  for (int f = 0; f < kFeatureCount; ++f) {
    std::vector<double> col;
    col.reserve(rows.size());
    for (const auto& r : rows)
      if (!std::isnan(r.v[static_cast<std::size_t>(f)]))
        col.push_back(r.v[static_cast<std::size_t>(f)]);
    if (col.empty()) throw DataError(std::string("feature entirely missing: ") + kFeatureNames[static_cast<std::size_t>(f)]);
    double m = 0;
    for (double x : col) m += x;
    m /= static_cast<double>(col.size());
    double var = 0;
    for (double x : col) var += (x - m) * (x - m);
    var /= static_cast<double>(col.size());
    std::sort(col.begin(), col.end());
    const std::size_t mid = col.size() / 2;
    const double med = col.size() % 2 ? col[mid] : 0.5 * (col[mid - 1] + col[mid]);
    s.mean[static_cast<std::size_t>(f)] = m;
    s.stddev[static_cast<std::size_t>(f)] = std::sqrt(var);
    s.median[static_cast<std::size_t>(f)] = med;
    s.constant[static_cast<std::size_t>(f)] = !(std::sqrt(var) > 0.0);
  }
  return s;
}

/// Replace missing values with the fit-scope median.
inline NumericFeatures impute(NumericFeatures x, const FeatureStats& stats) {
  for (int f = 0; f < kFeatureCount; ++f) {
    auto i = static_cast<std::size_t>(f);
    if (std::isnan(x.v[i])) x.v[i] = stats.median[i];
  }
  return x;
}

/// Impute, then z-score with the fit-scope mean/std. Constant features map
/// to zero.
inline std::array<double, kFeatureCount> standardize(const NumericFeatures& x,
                                                     const FeatureStats& stats) {
  const NumericFeatures filled = impute(x, stats);
  std::array<double, kFeatureCount> z{};
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    z[f] = stats.constant[f] ? 0.0 : (filled.v[f] - stats.mean[f]) / stats.stddev[f];
  }
  return z;
}

// ---------------------------------------------------------------- records

struct SampleRecord {
  GridEntry entry;
  NumericFeatures numeric;
  double doc_target = 0.0;
  std::string stack_orig_path, stack_conv_path;  // relative to dataset root

  // populated when stacks are loaded
  optics::ProjectionStack stack_orig, stack_conv;
};

/// Scale-leak guard: statistics may only be fit on exactly the training
/// id set of the split manifest.
inline FeatureStats fit_stats(const std::vector<SampleRecord>& records,
                              const SplitManifest& splits) {
  std::vector<std::string> ids;
  ids.reserve(records.size());
  std::vector<NumericFeatures> rows;
  rows.reserve(records.size());
  for (const auto& r : records) {
    ids.push_back(r.entry.id);
    rows.push_back(r.numeric);
  }
  const std::uint64_t got = id_set_hash(ids);
  const std::uint64_t want = id_set_hash(splits.train);
  if (got != want)
    throw DataError("fit_stats: statistics must be fit on the training split only");
  FeatureStats s = compute_stats(rows);
  s.fit_scope_hash = want;
  return s;
}

// ------------------------------------------------------------------ build

struct DatasetParams {
  std::string out_dir;
  GridOptions grid;
  int grid_resolution = 64;   // lattice sampling, voxels per edge
  double domain_size = 2.5;   // mm; sized so the optical kernels span pixels
  int out_px = 32;            // stack width/height
  int depth_layers = 32;      // stack depth after nearest-layer resampling
  std::string optics_preset_name = "anisotropic";
  double alpha_diffusion = 1.0;
  double irradiance_slope_per_mm = 0.02;
  std::uint64_t seed = 1;
  std::string config_hash;    // recorded in every artifact
  bool write_layer_pngs = false;

  optics::OpticsParams optics_params(double level) const {
    optics::OpticsParams p = optics::optics_preset(optics_preset_name);
    p.alpha_diffusion = alpha_diffusion;
    p.irradiance.i_max = level;
    p.irradiance.slope_per_mm = irradiance_slope_per_mm;
    return p;
  }
};

struct DatasetSummary {
  std::size_t records = 0;
  std::size_t train = 0, val = 0, test = 0;
};

namespace detail {

inline std::string csv_escape(const std::string& s) { return s; }  // ids carry no commas

inline std::string manifest_header() {
  std::string h = "id,geometry,n,c,layer_height,irradiance_pos";
  for (const char* name : kFeatureNames) h += std::string(",f_") + name;
  h += ",doc_target,stack_orig,stack_conv";
  return h;
}

inline std::string manifest_row(const SampleRecord& r) {
  std::string row = r.entry.id;
  row += "," + std::string(lattice::geometry_name(r.entry.geometry));
  row += "," + std::to_string(r.entry.unit_cells);
  row += "," + format_double(r.entry.offset_c);
  row += "," + format_double(r.entry.layer_height);
  row += "," + std::to_string(r.entry.irradiance_pos);
  for (double f : r.numeric.v) row += "," + format_double(f);
  row += "," + format_double(r.doc_target);
  row += "," + r.stack_orig_path;
  row += "," + r.stack_conv_path;
  return row;
}

}  // namespace detail

/// Generate every record of the design grid: lattice geometry, metrics,
/// dual projection stacks, synthetic targets, splits, and train-only
/// feature statistics. Fully deterministic for a given parameter set.
inline DatasetSummary build_dataset(const DatasetParams& params) {
  namespace fs = std::filesystem;
  const fs::path root(params.out_dir);
  fs::create_directories(root / "stacks");

  const std::vector<GridEntry> grid = build_design_grid(params.grid);
  std::vector<SampleRecord> records;
  records.reserve(grid.size());

  // Geometry work is shared: the level-set field depends only on
  // (geometry, unit_cells), metrics on (geometry, unit_cells, offset),
  // stacks additionally on layer_height. Irradiance position only shifts
  // numeric features.
  struct StackKey {
    std::string key;
    optics::ProjectionStack orig, conv;
  };

  lattice::ScalarField field;
  std::string field_key;
  lattice::GeomMetrics metrics;
  std::string metrics_key;
  StackKey stacks;

  for (const GridEntry& e : grid) {
    const std::string fkey =
        std::string(lattice::geometry_name(e.geometry)) + "/" + std::to_string(e.unit_cells);
    if (fkey != field_key) {
      lattice::LatticeConfig cfg;
      cfg.geometry = e.geometry;
      cfg.unit_cells = e.unit_cells;
      cfg.offset_c = e.offset_c;
      cfg.grid_resolution = params.grid_resolution;
      cfg.domain_size = params.domain_size;
      field = lattice::level_set_field(cfg);
      field_key = fkey;
    }
    const std::string mkey = fkey + "/" + format_double(e.offset_c);
    if (mkey != metrics_key) {
      metrics = lattice::lattice_metrics(field, e.offset_c, lattice::SolidMode::Sheet);
      metrics_key = mkey;
    }
    const std::string skey = mkey + "/" + format_double(e.layer_height);
    if (skey != stacks.key) {
      const lattice::OccupancyGrid occ =
          lattice::solidify(field, e.offset_c, lattice::SolidMode::Sheet);
      optics::ProjectionStack native = optics::slice_stack(occ, e.layer_height, params.out_px);
      stacks.orig = optics::resample_depth(native, params.depth_layers);
      // kernels are irradiance-independent; transform once per stack
      stacks.conv = optics::forward_transform(stacks.orig, params.optics_params(1.0));
      stacks.key = skey;
    }

    SampleRecord r;
    r.entry = e;
    const double level =
        params.grid.irradiance_levels[static_cast<std::size_t>(e.irradiance_pos)];
    r.numeric.sa_to_v() = metrics.sa_to_v;
    r.numeric.void_ratio() = metrics.porosity;
    r.numeric.lattice_n() = e.unit_cells;
    r.numeric.solid_volume() = metrics.solid_volume;
    r.numeric.layer_height() = e.layer_height;
    r.numeric.max_intensity() = level;  // i_max = 1 at the vat center

    const double act = interface_activity(stacks.orig, stacks.conv);
    r.doc_target = synth_doc_oracle(r.numeric, act, 1.0, params.seed, e.id);

    r.stack_orig_path = "stacks/" + e.id + "_orig";
    r.stack_conv_path = "stacks/" + e.id + "_conv";
    optics::write_stack_raw(stacks.orig, (root / r.stack_orig_path).string());
    optics::write_stack_raw(stacks.conv, (root / r.stack_conv_path).string());
    if (params.write_layer_pngs) {
      const int mid = stacks.orig.depth() / 2;
      optics::write_png_gray(stacks.orig.layers[static_cast<std::size_t>(mid)],
                             (root / (r.stack_orig_path + "_mid.png")).string());
    }
    records.push_back(std::move(r));
  }

  // manifest
  std::string csv = detail::manifest_header() + "\n";
  for (const auto& r : records) csv += detail::manifest_row(r) + "\n";
  write_text_file((root / "manifest.csv").string(), csv);

  // splits
  std::vector<std::string> ids;
  ids.reserve(records.size());
  for (const auto& r : records) ids.push_back(r.entry.id);
  const SplitManifest splits = split_ids(ids, params.seed);
  json jsplits;
  jsplits["config_hash"] = params.config_hash;
  jsplits["seed"] = params.seed;
  jsplits["tool_version"] = kToolVersion;
  jsplits["train"] = splits.train;
  jsplits["val"] = splits.val;
  jsplits["test"] = splits.test;
  write_text_file((root / "splits.json").string(), jsplits.dump(2) + "\n");

  // train-only statistics
  std::vector<SampleRecord> train_records;
  for (const auto& r : records) {
    if (std::find(splits.train.begin(), splits.train.end(), r.entry.id) != splits.train.end())
      train_records.push_back(r);
  }
  const FeatureStats stats = fit_stats(train_records, splits);
  json jstats;
  jstats["config_hash"] = params.config_hash;
  jstats["seed"] = params.seed;
  jstats["tool_version"] = kToolVersion;
  jstats["fit_scope_hash"] = hex64(stats.fit_scope_hash);
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    json jf;
    jf["mean"] = stats.mean[f];
    jf["std"] = stats.stddev[f];
    jf["median"] = stats.median[f];
    jf["constant"] = stats.constant[f];
    jstats["features"][kFeatureNames[f]] = jf;
  }
  write_text_file((root / "stats.json").string(), jstats.dump(2) + "\n");

  // root metadata
  json jroot;
  jroot["config_hash"] = params.config_hash;
  jroot["seed"] = params.seed;
  jroot["tool_version"] = kToolVersion;
  jroot["records"] = records.size();
  jroot["grid_resolution"] = params.grid_resolution;
  jroot["domain_size_mm"] = params.domain_size;
  jroot["out_px"] = params.out_px;
  jroot["depth_layers"] = params.depth_layers;
  jroot["optics_preset"] = params.optics_preset_name;
  jroot["alpha_diffusion"] = params.alpha_diffusion;
  write_text_file((root / "dataset.json").string(), jroot.dump(2) + "\n");

  DatasetSummary s;
  s.records = records.size();
  s.train = splits.train.size();
  s.val = splits.val.size();
  s.test = splits.test.size();
  return s;
}

// ------------------------------------------------------------------- load

struct Dataset {
  json meta;
  std::vector<SampleRecord> records;
  SplitManifest splits;
  FeatureStats stats;
  std::string root;

  const SampleRecord& by_id(const std::string& id) const {
    for (const auto& r : records)
      if (r.entry.id == id) return r;
    throw DataError("unknown record id: " + id);
  }
};

inline Dataset load_dataset(const std::string& dir, bool with_stacks = true) {
  namespace fs = std::filesystem;
  Dataset d;
  d.root = dir;
  d.meta = json::parse(read_text_file((fs::path(dir) / "dataset.json").string()));

  const std::string csv = read_text_file((fs::path(dir) / "manifest.csv").string());
  const auto lines = split(csv, '\n');
  if (lines.size() < 2) throw DataError("manifest.csv is empty");
  const std::string expected_header = detail::manifest_header();
  if (trim(lines[0]) != expected_header) throw DataError("manifest.csv header mismatch");
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::string line = trim(lines[li]);
    if (line.empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() != 9 + kFeatureCount) throw DataError("manifest.csv bad column count");
    SampleRecord r;
    r.entry.id = cols[0];
    r.entry.geometry = lattice::parse_geometry(cols[1]);
    r.entry.unit_cells = std::stoi(cols[2]);
    r.entry.offset_c = std::stod(cols[3]);
    r.entry.layer_height = std::stod(cols[4]);
    r.entry.irradiance_pos = std::stoi(cols[5]);
    for (std::size_t f = 0; f < kFeatureCount; ++f) r.numeric.v[f] = std::stod(cols[6 + f]);
    r.doc_target = std::stod(cols[6 + kFeatureCount]);
    r.stack_orig_path = cols[7 + kFeatureCount];
    r.stack_conv_path = cols[8 + kFeatureCount];
    if (with_stacks) {
      r.stack_orig = optics::read_stack_raw((fs::path(dir) / r.stack_orig_path).string());
      r.stack_conv = optics::read_stack_raw((fs::path(dir) / r.stack_conv_path).string());
    }
    d.records.push_back(std::move(r));
  }

  const json jsplits = json::parse(read_text_file((fs::path(dir) / "splits.json").string()));
  d.splits.seed = jsplits.at("seed").get<std::uint64_t>();
  d.splits.train = jsplits.at("train").get<std::vector<std::string>>();
  d.splits.val = jsplits.at("val").get<std::vector<std::string>>();
  d.splits.test = jsplits.at("test").get<std::vector<std::string>>();

  const json jstats = json::parse(read_text_file((fs::path(dir) / "stats.json").string()));
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    const json& jf = jstats.at("features").at(kFeatureNames[f]);
    d.stats.mean[f] = jf.at("mean").get<double>();
    d.stats.stddev[f] = jf.at("std").get<double>();
    d.stats.median[f] = jf.at("median").get<double>();
    d.stats.constant[f] = jf.at("constant").get<bool>();
  }
  d.stats.fit_scope_hash = std::stoull(jstats.at("fit_scope_hash").get<std::string>(), nullptr, 16);
  return d;
}

}  // namespace cpga::data
