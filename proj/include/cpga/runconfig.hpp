#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "cpga/common.hpp"
#include "cpga/dataset.hpp"
#include "cpga/training.hpp"

namespace cpga::cli {

/// Plain-text run configuration: `[section]` headers and `key = value`
/// lines, '#' comments. Every default mirrors a module decision; unknown
/// keys are rejected.
class RunConfig {
 public:
  RunConfig() : entries_(defaults()) {}

  static std::map<std::string, std::string> defaults() {
    return {
        {"lattice.grid_resolution", "64"},
        {"lattice.domain_size", "2.5"},
        {"optics.preset", "anisotropic"},
        {"optics.alpha_diffusion", "1"},
        {"optics.irradiance_slope", "0.02"},
        {"optics.attenuation_mu", "0"},
        {"dataset.out_px", "32"},
        {"dataset.depth_layers", "32"},
        {"dataset.seed", "1"},
        {"dataset.layer_heights", "0.05,0.1,0.15"},
        {"dataset.irradiance_levels", "1,0.85,0.7"},
        {"dataset.geometries", "primitive,diamond,fischer_koch,gyroid,neovius,frd"},
        {"train.arch", "late_film"},
        {"train.epochs", "100"},
        {"train.batch_size", "16"},
        {"train.base_lr", "0.001"},
        {"train.lr_decay", "0.9"},
        {"train.lr_step_epochs", "10"},
        {"train.seed", "0"},
        {"train.conv1x1_channels", "64"},
        {"interpret.patch", "4"},
        {"interpret.stride", "4"},
        {"interpret.fill", "0"},
        {"interpret.transformed_modality", "false"},
    };
  }

  static bool known_key(const std::string& key) {
    static const auto fixed = [] {
      std::set<std::string> s;
      for (const auto& [k, v] : defaults()) s.insert(k);
      return s;
    }();
    if (fixed.count(key)) return true;
    // per-geometry offset overrides: dataset.offsets_<geometry>
    if (key.rfind("dataset.offsets_", 0) == 0) {
      const std::string g = key.substr(std::string("dataset.offsets_").size());
      try {
        (void)lattice::parse_geometry(g);
        return true;
      } catch (const ConfigError&) {
        return false;
      }
    }
    return false;
  }

  void load_file(const std::string& path) { merge_text(read_text_file(path)); }

  void merge_text(const std::string& text) {
    std::string section;
    for (const std::string& raw : split(text, '\n')) {
      std::string line = raw;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[' && line.back() == ']') {
        section = to_lower(trim(line.substr(1, line.size() - 2)));
        continue;
      }
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("bad config line: '" + raw + "'");
      const std::string key =
          (section.empty() ? "" : section + ".") + to_lower(trim(line.substr(0, eq)));
      set(key, trim(line.substr(eq + 1)));
    }
  }

  /// Flag-style override, "section.key=value".
  void set(const std::string& key, const std::string& value) {
    if (!known_key(key)) throw ConfigError("unknown config key: '" + key + "'");
    entries_[key] = value;
  }

  const std::string& get(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("missing config key: '" + key + "'");
    return it->second;
  }
  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  double get_double(const std::string& key) const {
    try {
      return std::stod(get(key));
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " is not a number: '" + get(key) + "'");
    }
  }
  int get_int(const std::string& key) const {
    try {
      return std::stoi(get(key));
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " is not an integer: '" + get(key) + "'");
    }
  }
  bool get_bool(const std::string& key) const {
    const std::string v = to_lower(get(key));
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key " + key + " is not a boolean: '" + get(key) + "'");
  }
  std::vector<double> get_doubles(const std::string& key) const {
    std::vector<double> out;
    for (const auto& part : split(get(key), ',')) {
      if (trim(part).empty()) continue;
      out.push_back(std::stod(trim(part)));
    }
    return out;
  }

  /// Canonical hash over a set of sections (sorted key=value lines).
  std::string hash_sections(const std::vector<std::string>& sections) const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [k, v] : entries_) {
      bool in_scope = false;
      for (const auto& s : sections) {
        if (k.rfind(s + ".", 0) == 0) in_scope = true;
      }
      if (!in_scope) continue;
      h = fnv1a64(k + "=" + v + "\n", h);
    }
    return hex64(h);
  }

  std::string dataset_hash() const { return hash_sections({"lattice", "optics", "dataset"}); }
  std::string full_hash() const {
    return hash_sections({"lattice", "optics", "dataset", "train", "interpret"});
  }

  // ----------------------------------------------------- typed assemblies

  data::DatasetParams dataset_params(const std::string& out_dir) const {
    data::DatasetParams p;
    p.out_dir = out_dir;
    p.grid_resolution = get_int("lattice.grid_resolution");
    p.domain_size = get_double("lattice.domain_size");
    p.out_px = get_int("dataset.out_px");
    p.depth_layers = get_int("dataset.depth_layers");
    p.seed = static_cast<std::uint64_t>(std::stoull(get("dataset.seed")));
    p.optics_preset_name = get("optics.preset");
    p.alpha_diffusion = get_double("optics.alpha_diffusion");
    p.irradiance_slope_per_mm = get_double("optics.irradiance_slope");
    p.config_hash = dataset_hash();

    p.grid.geometries.clear();
    for (const auto& g : split(get("dataset.geometries"), ',')) {
      if (!trim(g).empty()) p.grid.geometries.push_back(lattice::parse_geometry(trim(g)));
    }
    p.grid.layer_heights = get_doubles("dataset.layer_heights");
    p.grid.irradiance_levels = get_doubles("dataset.irradiance_levels");
    for (lattice::GeometryKind g : p.grid.geometries) {
      const std::string key = std::string("dataset.offsets_") + lattice::geometry_name(g);
      if (has(key)) p.grid.offsets[g] = get_doubles(key);
    }
    return p;
  }

  training::TrainConfig train_config() const {
    training::TrainConfig t;
    t.arch = models::parse_arch(get("train.arch"));
    t.epochs = get_int("train.epochs");
    t.batch_size = get_int("train.batch_size");
    t.base_lr = get_double("train.base_lr");
    t.lr_decay = get_double("train.lr_decay");
    t.lr_step_epochs = get_int("train.lr_step_epochs");
    t.seed = static_cast<std::uint64_t>(std::stoull(get("train.seed")));
    t.conv1x1_channels = get_int("train.conv1x1_channels");
    return t;
  }

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace cpga::cli
