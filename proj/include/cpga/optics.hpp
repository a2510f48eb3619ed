#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cpga/common.hpp"
#include "cpga/geometry.hpp"
#include "cpga/image.hpp"

namespace cpga::optics {

// ------------------------------------------------------------- parameters

struct IrradianceProfile {
  double i_max = 1.0;        // a.u. at the vat center
  double slope_per_mm = 0.02; // linear falloff with radial distance
};

struct OpticsParams {
  double fwhm_x = 0.0;          // mm, projection PSF
  double fwhm_y = 0.0;          // mm
  double sigma_diffusion = 0.0; // mm, quencher transport kernel
  double diffusivity = 1.5e-4;  // mm^2/s
  double layer_time = 3.0;      // s
  double alpha_diffusion = 1.0; // subtraction strength, [0,2]
  double attenuation_mu = 0.0;  // mm^-1, Beer-Lambert; 0 disables
  IrradianceProfile irradiance;

  void validate() const {
    if (!(fwhm_x > 0) || !(fwhm_y > 0) || !(sigma_diffusion > 0))
      throw ConfigError("optics lengths must be positive");
    if (alpha_diffusion < 0 || alpha_diffusion > 2)
      throw ConfigError("alpha_diffusion must lie in [0,2]");
  }
};

inline double sigma_from_fwhm(double fwhm) {
  return fwhm / (2.0 * std::sqrt(2.0 * std::log(2.0)));
}

inline double fwhm_from_sigma(double sigma) {
  return sigma * (2.0 * std::sqrt(2.0 * std::log(2.0)));
}

/// Named parameter sets. Two instrument characterizations are shipped:
/// "anisotropic" resolves the projection blur per axis (sigma 0.06/0.08,
/// diffusion 0.09) and is the default; "averaged" folds both axes into
/// one wider figure (sigma 0.066, diffusion 0.15).
inline OpticsParams optics_preset(const std::string& name) {
  OpticsParams p;
  const std::string n = to_lower(trim(name));
  if (n == "anisotropic" || n == "default") {
    p.fwhm_x = fwhm_from_sigma(0.06);
    p.fwhm_y = fwhm_from_sigma(0.08);
    p.sigma_diffusion = 0.09;
    p.diffusivity = 1.5e-4;
  } else if (n == "averaged") {
    p.fwhm_x = 0.155;
    p.fwhm_y = 0.155;
    p.sigma_diffusion = 0.15;
    p.diffusivity = 1.51e-4;
  } else {
    throw ConfigError("unknown optics preset: '" + name + "'");
  }
  return p;
}

// ---------------------------------------------------------------- kernels

struct Kernel2D {
  std::vector<double> taps;  // (2*ry+1) x (2*rx+1), row-major
  int rx = 0, ry = 0;
  double pitch = 0.0;  // mm
  bool degenerate = false;

  int width() const { return 2 * rx + 1; }
  int height() const { return 2 * ry + 1; }
  double at(int dy, int dx) const {
    return taps[static_cast<std::size_t>(dy + ry) * width() + (dx + rx)];
  }
  double sum() const {
    double s = 0;
    for (double t : taps) s += t;
    return s;
  }
};

/// Separable Gaussian truncated at 3 sigma per axis, jointly renormalized
/// to unit sum. A sigma below pitch/10 collapses that axis to an identity
/// tap (degenerate when both axes collapse).
inline Kernel2D gaussian_kernel(double sigma_x, double sigma_y, double pitch) {
  if (!(sigma_x > 0) || !(sigma_y > 0)) throw ConfigError("gaussian_kernel: sigma must be > 0");
  if (!(pitch > 0)) throw ConfigError("gaussian_kernel: pitch must be > 0");
  Kernel2D k;
  k.pitch = pitch;
  k.rx = sigma_x < pitch / 10.0 ? 0 : static_cast<int>(std::ceil(3.0 * sigma_x / pitch));
  k.ry = sigma_y < pitch / 10.0 ? 0 : static_cast<int>(std::ceil(3.0 * sigma_y / pitch));
  k.degenerate = (k.rx == 0 && k.ry == 0);

  std::vector<double> gx(static_cast<std::size_t>(2 * k.rx + 1));
  std::vector<double> gy(static_cast<std::size_t>(2 * k.ry + 1));
  for (int i = -k.rx; i <= k.rx; ++i) {
    const double d = i * pitch;
    gx[static_cast<std::size_t>(i + k.rx)] = std::exp(-d * d / (2.0 * sigma_x * sigma_x));
  }
  for (int i = -k.ry; i <= k.ry; ++i) {
    const double d = i * pitch;
    gy[static_cast<std::size_t>(i + k.ry)] = std::exp(-d * d / (2.0 * sigma_y * sigma_y));
  }
  k.taps.resize(gx.size() * gy.size());
  double total = 0.0;
  for (std::size_t y = 0; y < gy.size(); ++y)
    for (std::size_t x = 0; x < gx.size(); ++x) total += gy[y] * gx[x];
  for (std::size_t y = 0; y < gy.size(); ++y)
    for (std::size_t x = 0; x < gx.size(); ++x) k.taps[y * gx.size() + x] = gy[y] * gx[x] / total;
  return k;
}

/// 2D convolution with replicate (edge-clamp) padding. No clamping of the
/// output range; callers clamp where the physics demands it.
inline Image2D convolve_replicate(const Image2D& img, const Kernel2D& kernel) {
  Image2D out(img.width, img.height);
  const int rx = kernel.rx, ry = kernel.ry;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int dy = -ry; dy <= ry; ++dy) {
        const int sy = std::min(img.height - 1, std::max(0, y + dy));
        for (int dx = -rx; dx <= rx; ++dx) {
          const int sx = std::min(img.width - 1, std::max(0, x + dx));
          acc += kernel.at(dy, dx) * img.at(sy, sx);
        }
      }
      out.at(y, x) = static_cast<float>(acc);
    }
  }
  return out;
}

// ------------------------------------------------------------- transforms

/// Projection-system blur: every layer convolved with the PSF.
inline ProjectionStack apply_diffraction(const ProjectionStack& stack, const OpticsParams& params) {
  params.validate();
  const Kernel2D psf = gaussian_kernel(sigma_from_fwhm(params.fwhm_x),
                                       sigma_from_fwhm(params.fwhm_y), stack.pixel_pitch);
  ProjectionStack out = stack;
  parallel_for(stack.depth(), [&](std::int64_t i0, std::int64_t i1) {
    for (std::int64_t i = i0; i < i1; ++i) {
      out.layers[static_cast<std::size_t>(i)] =
          convolve_replicate(stack.layers[static_cast<std::size_t>(i)], psf);
      for (auto& v : out.layers[static_cast<std::size_t>(i)].v)
        v = std::min(1.0f, std::max(0.0f, v));
    }
  });
  return out;
}

/// Quencher influx: subtract the blurred inverse of the layer, i.e.
/// layer' = clamp(layer - alpha * G_sigma * (1 - layer)).
inline ProjectionStack apply_diffusion(const ProjectionStack& stack, const OpticsParams& params) {
  params.validate();
  const Kernel2D kd =
      gaussian_kernel(params.sigma_diffusion, params.sigma_diffusion, stack.pixel_pitch);
  const float alpha = static_cast<float>(params.alpha_diffusion);
  ProjectionStack out = stack;
  parallel_for(stack.depth(), [&](std::int64_t i0, std::int64_t i1) {
    for (std::int64_t i = i0; i < i1; ++i) {
      const Image2D& src = stack.layers[static_cast<std::size_t>(i)];
      Image2D inv(src.width, src.height);
      for (std::size_t p = 0; p < src.size(); ++p) inv.v[p] = 1.0f - src.v[p];
      const Image2D blurred = convolve_replicate(inv, kd);
      Image2D& dst = out.layers[static_cast<std::size_t>(i)];
      for (std::size_t p = 0; p < src.size(); ++p) {
        dst.v[p] = std::min(1.0f, std::max(0.0f, src.v[p] - alpha * blurred.v[p]));
      }
    }
  });
  return out;
}

/// The second model modality: diffraction followed by diffusion.
inline ProjectionStack forward_transform(const ProjectionStack& stack, const OpticsParams& params) {
  return apply_diffusion(apply_diffraction(stack, params), params);
}

// ------------------------------------------------------------- irradiance

inline double irradiance_at(double radial_distance_mm, const OpticsParams& params) {
  return std::max(0.0, params.irradiance.i_max -
                           params.irradiance.slope_per_mm * radial_distance_mm);
}

/// Diagnostic Beer-Lambert dose volume: surface irradiance scaled by the
/// layer image and attenuated with depth from the exposure plane.
inline std::vector<Image2D> dosage_field(const ProjectionStack& stack, const OpticsParams& params) {
  std::vector<Image2D> dose;
  dose.reserve(static_cast<std::size_t>(stack.depth()));
  const double cx = (stack.width() - 1) / 2.0, cy = (stack.height() - 1) / 2.0;
  for (int i = 0; i < stack.depth(); ++i) {
    const double z_mm = (i + 0.5) * stack.layer_height;
    const double atten = std::exp(-params.attenuation_mu * z_mm);
    const Image2D& layer = stack.layers[static_cast<std::size_t>(i)];
    Image2D d(layer.width, layer.height);
    for (int y = 0; y < layer.height; ++y) {
      for (int x = 0; x < layer.width; ++x) {
        const double r = std::hypot((x - cx) * stack.pixel_pitch, (y - cy) * stack.pixel_pitch);
        d.at(y, x) = static_cast<float>(irradiance_at(r, params) * layer.at(y, x) * atten);
      }
    }
    dose.push_back(std::move(d));
  }
  return dose;
}

// ---------------------------------------------------------------- slicing

/// Slice an occupancy grid into exposure layers: each layer is the
/// solid fraction of its z-slab, area-averaged in-plane and resampled to
/// out_px x out_px. A 10 mm object at 0.05 mm layers yields 200 layers.
inline ProjectionStack slice_stack(const lattice::OccupancyGrid& occ, double layer_height,
                                   int out_px) {
  if (!(layer_height > 0)) throw ConfigError("layer_height must be positive");
  if (out_px < 1) throw ConfigError("out_px must be >= 1");
  const double object_height = occ.nz * occ.spacing;
  int n_layers = static_cast<int>(std::ceil(object_height / layer_height - 1e-9));
  if (n_layers < 1) n_layers = 1;  // layer taller than the object: single layer

  ProjectionStack stack;
  stack.layer_height = layer_height;
  stack.pixel_pitch = occ.nx * occ.spacing / out_px;
  stack.layers.assign(static_cast<std::size_t>(n_layers), Image2D());

  parallel_for(n_layers, [&](std::int64_t l0, std::int64_t l1) {
    for (std::int64_t li = l0; li < l1; ++li) {
      const double z0 = static_cast<double>(li) * layer_height;
      const double z1 = std::min(object_height, z0 + layer_height);
      Image2D native(occ.nx, occ.ny);
      double wsum = 0.0;
      const int k0 = std::max(0, static_cast<int>(std::floor(z0 / occ.spacing)));
      const int k1 = std::min(occ.nz - 1, static_cast<int>(std::ceil(z1 / occ.spacing)) - 1);
      for (int k = k0; k <= k1; ++k) {
        const double vz0 = k * occ.spacing, vz1 = (k + 1) * occ.spacing;
        const double w = std::max(0.0, std::min(vz1, z1) - std::max(vz0, z0));
        if (w <= 0) continue;
        wsum += w;
        for (int y = 0; y < occ.ny; ++y)
          for (int x = 0; x < occ.nx; ++x)
            native.at(y, x) += static_cast<float>(w * (occ.at(x, y, k) ? 1.0 : 0.0));
      }
      if (wsum > 0)
        for (auto& v : native.v) v = static_cast<float>(v / wsum);
      stack.layers[static_cast<std::size_t>(li)] = resample_box(native, out_px, out_px);
    }
  });
  return stack;
}

}  // namespace cpga::optics
