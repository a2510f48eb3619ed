#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "cpga/geometry.hpp"
#include "cpga/marching_cubes.hpp"

namespace cpga::lattice {

struct GeomMetrics {
  double surface_area = 0.0;   // mm^2
  double solid_volume = 0.0;   // mm^3
  double porosity = 0.0;       // void fraction in [0,1]
  double sa_to_v = 0.0;        // mm^-1, 0 when solid_volume == 0
};

/// Voxel-count volume and porosity of an occupancy grid.
inline GeomMetrics volume_and_porosity(const OccupancyGrid& occ) {
  GeomMetrics m;
  const std::size_t solid = occ.solid_count();
  const std::size_t total = occ.size();
  const double voxel = occ.spacing * occ.spacing * occ.spacing;
  m.solid_volume = static_cast<double>(solid) * voxel;
  m.porosity = total == 0 ? 1.0 : 1.0 - static_cast<double>(solid) / static_cast<double>(total);
  return m;
}

/// Full geometric descriptor set for one lattice configuration: voxel
/// volume/porosity plus mesh surface area of the sheet (or skeletal)
/// boundary. Domain boundary faces are not part of the surface area.
inline GeomMetrics lattice_metrics(const ScalarField& field, double offset_c, SolidMode mode) {
  GeomMetrics m = volume_and_porosity(solidify(field, offset_c, mode));
  TriMesh mesh;
  if (mode == SolidMode::Sheet) {
    mesh = marching_cubes(field, offset_c);
  } else {
    // Skeletal solid f <= c: boundary is the level set of c - f.
    mesh = marching_cubes_core(
        field.nx, field.ny, field.nz, field.spacing,
        [&](int i, int j, int k) { return offset_c - field.at(i, j, k); }, false);
  }
  m.surface_area = surface_area(mesh);
  m.sa_to_v = m.solid_volume > 0.0 ? m.surface_area / m.solid_volume : 0.0;
  return m;
}

// ------------------------------------------------------------ regression

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  bool r2_defined = true;  // false when the response is constant
};

/// Ordinary least squares y = slope*x + intercept.
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 3)
    throw ConfigError("fit_line needs at least 3 points");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
    syy += y[i] * y[i];
  }
  const double vxx = sxx - sx * sx / n;
  const double vxy = sxy - sx * sy / n;
  const double vyy = syy - sy * sy / n;
  if (vxx <= 0.0) throw ConfigError("fit_line: degenerate (constant) abscissa");
  LineFit f;
  f.slope = vxy / vxx;
  f.intercept = (sy - f.slope * sx) / n;
  if (vyy <= 0.0) {
    f.r2_defined = false;
    f.r2 = 0.0;
  } else {
    f.r2 = (vxy * vxy) / (vxx * vyy);
  }
  return f;
}

enum class SweepMetric { Porosity, SurfaceArea, SolidVolume };

/// Sample the level-set field once, then sweep the offset and fit the
/// requested metric against it.
inline LineFit sweep_and_fit(GeometryKind geometry, int unit_cells,
                             const std::vector<double>& c_values,
                             SweepMetric metric = SweepMetric::Porosity,
                             int grid_resolution = 100, double domain_size = 10.0,
                             SolidMode mode = SolidMode::Sheet,
                             std::vector<double>* metric_out = nullptr) {
  if (c_values.size() < 3) throw ConfigError("sweep_and_fit needs at least 3 offsets");
  LatticeConfig cfg;
  cfg.geometry = geometry;
  cfg.unit_cells = unit_cells;
  cfg.offset_c = c_values.front();
  cfg.grid_resolution = grid_resolution;
  cfg.domain_size = domain_size;
  cfg.mode = mode;
  const ScalarField field = level_set_field(cfg);

  std::vector<double> ys;
  ys.reserve(c_values.size());
  for (double c : c_values) {
    switch (metric) {
      case SweepMetric::Porosity:
        ys.push_back(volume_and_porosity(solidify(field, c, mode)).porosity);
        break;
      case SweepMetric::SolidVolume:
        ys.push_back(volume_and_porosity(solidify(field, c, mode)).solid_volume);
        break;
      case SweepMetric::SurfaceArea:
        ys.push_back(lattice_metrics(field, c, mode).surface_area);
        break;
    }
  }
  if (metric_out) *metric_out = ys;
  return fit_line(c_values, ys);
}

}  // namespace cpga::lattice
