#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpga/dataset.hpp"
#include "cpga/models.hpp"
#include "cpga/training.hpp"

namespace cpga::interpret {

using json = nlohmann::json;

// --------------------------------------------------------------- saliency

struct SaliencyMap {
  Tensor<float> values;  // [1, D, H, W], max-normalized unless all_zero
  bool all_zero = false;
  std::string sample_id;
  std::string arch;
};

/// |d prediction / d voxel| over the original modality (optionally the
/// transformed one), max-normalized. The model must expose input
/// gradients; dropout stays off.
template <class TModel>
SaliencyMap saliency(TModel& model, const models::ModelInput<float>& in,
                     const std::string& sample_id, bool transformed_modality = false) {
  if (!models::arch_uses_images(model.cfg.arch))
    throw ConfigError("saliency: architecture has no image pathway");
  model.set_training(false);
  model.enable_input_grads(true);
  (void)model.forward(in);
  model.zero_grads();
  model.backward(1.0f);
  model.enable_input_grads(false);

  SaliencyMap map;
  map.sample_id = sample_id;
  map.arch = models::arch_name(model.cfg.arch);
  map.values = transformed_modality ? model.grad_conv() : model.grad_orig();
  float peak = 0.0f;
  for (auto& v : map.values.v) {
    v = std::abs(v);
    peak = std::max(peak, v);
  }
  if (peak > 0.0f) {
    for (auto& v : map.values.v) v /= peak;
  } else {
    map.all_zero = true;  // reported un-normalized
  }
  return map;
}

// -------------------------------------------------------------- occlusion

struct OcclusionMap {
  // one |delta prediction| per (layer, y tile, x tile)
  std::vector<double> values;
  int depth = 0, ny = 0, nx = 0;
  int patch = 4, stride = 4;
  float fill = 0.0f;
  double base_pred = 0.0;

  double at(int z, int ty, int tx) const {
    return values[(static_cast<std::size_t>(z) * ny + ty) * nx + tx];
  }
};

/// Core sweep: square patches on each layer, written into both modalities,
/// scored by |prediction shift|. The predictor sees the mutated stacks.
template <class Predict>
OcclusionMap occlusion_sweep(Predict&& predict, Tensor<float> orig, Tensor<float> conv, int patch,
                             int stride, float fill) {
  const int D = orig.shape[1], H = orig.shape[2], W = orig.shape[3];
  if (patch > H || patch > W) throw ConfigError("occlusion patch exceeds the image side");
  if (patch < 1 || stride < 1) throw ConfigError("occlusion patch and stride must be >= 1");

  OcclusionMap map;
  map.patch = patch;
  map.stride = stride;
  map.fill = fill;
  map.depth = D;
  map.ny = (H - patch) / stride + 1;
  map.nx = (W - patch) / stride + 1;
  map.base_pred = predict(orig, conv);
  map.values.assign(static_cast<std::size_t>(D) * map.ny * map.nx, 0.0);

  std::vector<float> save_o(static_cast<std::size_t>(patch) * patch);
  std::vector<float> save_c(save_o.size());
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int z = 0; z < D; ++z) {
    float* o_layer = orig.data() + static_cast<std::size_t>(z) * plane;
    float* c_layer = conv.data() + static_cast<std::size_t>(z) * plane;
    for (int ty = 0; ty < map.ny; ++ty) {
      for (int tx = 0; tx < map.nx; ++tx) {
        const int y0 = ty * stride, x0 = tx * stride;
        for (int py = 0; py < patch; ++py) {
          float* orow = o_layer + static_cast<std::size_t>(y0 + py) * W + x0;
          float* crow = c_layer + static_cast<std::size_t>(y0 + py) * W + x0;
          std::copy(orow, orow + patch, save_o.begin() + static_cast<std::ptrdiff_t>(py) * patch);
          std::copy(crow, crow + patch, save_c.begin() + static_cast<std::ptrdiff_t>(py) * patch);
          std::fill(orow, orow + patch, fill);
          std::fill(crow, crow + patch, fill);
        }
        const double pred = predict(orig, conv);
        map.values[(static_cast<std::size_t>(z) * map.ny + ty) * map.nx + tx] =
            std::abs(pred - map.base_pred);
        for (int py = 0; py < patch; ++py) {
          float* orow = o_layer + static_cast<std::size_t>(y0 + py) * W + x0;
          float* crow = c_layer + static_cast<std::size_t>(y0 + py) * W + x0;
          std::copy(save_o.begin() + static_cast<std::ptrdiff_t>(py) * patch,
                    save_o.begin() + static_cast<std::ptrdiff_t>(py + 1) * patch, orow);
          std::copy(save_c.begin() + static_cast<std::ptrdiff_t>(py) * patch,
                    save_c.begin() + static_cast<std::ptrdiff_t>(py + 1) * patch, crow);
        }
      }
    }
  }
  return map;
}

/// Model-backed occlusion with the numeric features held fixed.
inline OcclusionMap occlusion_map(models::Model<float>& model, const std::array<float, 6>& z,
                                  const Tensor<float>& orig, const Tensor<float>& conv,
                                  int patch = 4, int stride = 4, float fill = 0.0f) {
  model.set_training(false);
  auto predict = [&](const Tensor<float>& o, const Tensor<float>& c) {
    models::ModelInput<float> in;
    if (models::arch_uses_numeric(model.cfg.arch)) in.numeric = &z;
    in.orig = &o;
    in.conv = &c;
    return static_cast<double>(model.forward(in));
  };
  return occlusion_sweep(predict, orig, conv, patch, stride, fill);
}

/// Median |shift| over solid-majority patches divided by the median over
/// void-majority patches. `occupancy` is the original-modality stack (same
/// dims as the model input); a patch is solid-majority when its mean
/// occupancy exceeds one half.
inline double solid_void_contrast(const OcclusionMap& map, const Tensor<float>& occupancy) {
  const int D = occupancy.shape[1], H = occupancy.shape[2], W = occupancy.shape[3];
  if (map.depth != D) throw ConfigError("solid_void_contrast: depth mismatch");
  std::vector<double> solid, voidp;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int z = 0; z < map.depth; ++z) {
    const float* layer = occupancy.data() + static_cast<std::size_t>(z) * plane;
    for (int ty = 0; ty < map.ny; ++ty)
      for (int tx = 0; tx < map.nx; ++tx) {
        double mean = 0;
        for (int py = 0; py < map.patch; ++py)
          for (int px = 0; px < map.patch; ++px)
            mean += layer[static_cast<std::size_t>(ty * map.stride + py) * W +
                          (tx * map.stride + px)];
        mean /= map.patch * map.patch;
        (mean > 0.5 ? solid : voidp).push_back(map.at(z, ty, tx));
      }
  }
  auto median = [](std::vector<double>& v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t mid = v.size() / 2;
    return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
  };
  const double ms = median(solid);
  const double mv = median(voidp);
  if (std::isnan(ms) || std::isnan(mv)) return std::numeric_limits<double>::quiet_NaN();
  if (mv == 0.0) return ms > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  return ms / mv;
}

// -------------------------------------------------------------- error map

struct ErrorPoint {
  std::string id;
  double a = 0, b = 0, abs_err = 0;
};

struct ErrorMapPair {
  int feature_a = 0, feature_b = 0;
};

/// The three reference projections of |error| onto parameter-space planes.
inline std::vector<ErrorMapPair> default_error_pairs() {
  return {{4, 2},   // layer height vs lattice n
          {0, 1},   // SA/V vs void ratio
          {1, 2}};  // void ratio vs lattice n
}

inline std::vector<ErrorPoint> error_map(const data::Dataset& ds,
                                         const std::vector<training::Residual>& residuals,
                                         const ErrorMapPair& pair) {
  if (pair.feature_a < 0 || pair.feature_a >= data::kFeatureCount || pair.feature_b < 0 ||
      pair.feature_b >= data::kFeatureCount)
    throw ConfigError("error_map: feature index out of range");
  std::vector<ErrorPoint> points;
  points.reserve(residuals.size());
  for (const auto& r : residuals) {
    const auto& rec = ds.by_id(r.id);
    ErrorPoint p;
    p.id = r.id;
    p.a = rec.numeric.v[static_cast<std::size_t>(pair.feature_a)];
    p.b = rec.numeric.v[static_cast<std::size_t>(pair.feature_b)];
    p.abs_err = std::abs(r.pred - r.target);
    points.push_back(std::move(p));
  }
  return points;
}

inline std::string error_map_csv(const std::vector<ErrorPoint>& points,
                                 const ErrorMapPair& pair) {
  std::string csv = std::string(data::kFeatureNames[static_cast<std::size_t>(pair.feature_a)]) +
                    "," + data::kFeatureNames[static_cast<std::size_t>(pair.feature_b)] +
                    ",abs_error,id\n";
  for (const auto& p : points) {
    csv += format_double(p.a) + "," + format_double(p.b) + "," + format_double(p.abs_err) + "," +
           p.id + "\n";
  }
  return csv;
}

// ----------------------------------------------------------- gamma report

struct GammaFeature {
  std::string name;   // canonical feature name
  std::string label;  // display label
  double r = 0.0;     // Pearson R against the mean scale factor
};

struct GammaReport {
  std::string arch;
  bool constant_gamma = false;  // scale factor did not vary across samples
  std::array<GammaFeature, data::kFeatureCount> features;
  // hierarchical models: per-block mean-scale correlations, 8 blocks
  // (stream-major), each with one R per feature
  std::vector<std::array<double, data::kFeatureCount>> per_block;

  json to_json() const {
    json j;
    j["arch"] = arch;
    j["constant_gamma"] = constant_gamma;
    json f = json::array();
    for (const auto& gf : features)
      f.push_back({{"feature", gf.name}, {"label", gf.label}, {"r", gf.r}});
    j["features"] = f;
    if (!per_block.empty()) {
      json blocks = json::array();
      for (const auto& blk : per_block) {
        json row = json::object();
        for (std::size_t i = 0; i < data::kFeatureCount; ++i) row[data::kFeatureNames[i]] = blk[i];
        blocks.push_back(row);
      }
      j["per_block"] = blocks;
    }
    return j;
  }
};

inline const char* gamma_feature_label(std::size_t f) {
  // solid volume doubles as the mass proxy in the reference analysis
  return f == 3 ? "solid_volume (mass_before proxy)" : data::kFeatureNames[f];
}

namespace detail {

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0) || !(syy > 0)) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace detail

/// Correlate each standardized numeric feature with the mean learned
/// scale factor across the given samples. Gated architectures only.
inline GammaReport gamma_analysis(models::Model<float>& model,
                                  const std::vector<std::array<float, 6>>& zs) {
  if (!models::arch_is_film(model.cfg.arch))
    throw ConfigError("gamma_analysis: architecture has no gating parameters");
  if (zs.empty()) throw ConfigError("gamma_analysis: no samples");

  GammaReport report;
  report.arch = models::arch_name(model.cfg.arch);

  std::vector<double> mean_gamma(zs.size(), 0.0);
  std::vector<std::vector<double>> block_means;  // [block][sample]
  if (model.cfg.arch == models::ArchKind::HierFilm) block_means.assign(8, {});

  for (std::size_t si = 0; si < zs.size(); ++si) {
    if (model.cfg.arch == models::ArchKind::LateFilm) {
      const auto [gamma, beta] = model.film_vectors(zs[si]);
      (void)beta;
      double acc = 0;
      for (float g : gamma.v) acc += g;
      mean_gamma[si] = acc / static_cast<double>(gamma.size());
    } else {
      const auto gammas = model.hier_gamma_vectors(zs[si]);
      double overall = 0;
      for (std::size_t b = 0; b < gammas.size(); ++b) {
        double acc = 0;
        for (float g : gammas[b].v) acc += g;
        const double bm = acc / static_cast<double>(gammas[b].size());
        block_means[b].push_back(bm);
        overall += bm;
      }
      mean_gamma[si] = overall / static_cast<double>(gammas.size());
    }
  }

  double mg = 0, vg = 0;
  for (double g : mean_gamma) mg += g;
  mg /= static_cast<double>(mean_gamma.size());
  for (double g : mean_gamma) vg += (g - mg) * (g - mg);
  report.constant_gamma = !(vg > 0.0);

  for (std::size_t f = 0; f < data::kFeatureCount; ++f) {
    std::vector<double> feat(zs.size());
    for (std::size_t si = 0; si < zs.size(); ++si) feat[si] = zs[si][f];
    report.features[f].name = data::kFeatureNames[f];
    report.features[f].label = gamma_feature_label(f);
    report.features[f].r = report.constant_gamma ? 0.0 : detail::pearson(feat, mean_gamma);
  }
  for (auto& blk : block_means) {
    std::array<double, data::kFeatureCount> row{};
    for (std::size_t f = 0; f < data::kFeatureCount; ++f) {
      std::vector<double> feat(zs.size());
      for (std::size_t si = 0; si < zs.size(); ++si) feat[si] = zs[si][f];
      row[f] = detail::pearson(feat, blk);
    }
    report.per_block.push_back(row);
  }
  return report;
}

// ------------------------------------------------------------- map export

inline void write_volume_f32(const std::vector<float>& values, int d, int h, int w,
                             const std::string& path_base) {
  std::ofstream raw(path_base + ".f32", std::ios::binary);
  if (!raw) throw DataError("cannot write " + path_base + ".f32");
  raw.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
  std::string header = "format: raw_f32_le\ndims: " + std::to_string(d) + " " +
                       std::to_string(h) + " " + std::to_string(w) + "\norder: x_fastest\n";
  write_text_file(path_base + ".txt", header);
}

inline void write_map_slices_png(const std::vector<float>& values, int d, int h, int w,
                                 const std::string& path_base, int n_slices = 4) {
  float peak = 0.0f;
  for (float v : values) peak = std::max(peak, std::abs(v));
  for (int s = 0; s < n_slices; ++s) {
    const int z = d * (2 * s + 1) / (2 * n_slices);
    optics::Image2D img(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float v = values[(static_cast<std::size_t>(z) * h + y) * w + x];
        img.at(y, x) = peak > 0 ? std::abs(v) / peak : 0.0f;
      }
    optics::write_png_gray(img, path_base + "_z" + std::to_string(z) + ".png");
  }
}

}  // namespace cpga::interpret
