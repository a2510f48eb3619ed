#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cpga/common.hpp"

namespace cpga::lattice {

// ------------------------------------------------------------------ types

enum class GeometryKind : int {
  Primitive = 0,
  Diamond,
  FischerKoch,
  Gyroid,
  Neovius,
  FRD,
};

inline constexpr std::array<GeometryKind, 6> kAllGeometries = {
    GeometryKind::Primitive,   GeometryKind::Diamond, GeometryKind::FischerKoch,
    GeometryKind::Gyroid,      GeometryKind::Neovius, GeometryKind::FRD,
};

inline const char* geometry_name(GeometryKind g) {
  switch (g) {
    case GeometryKind::Primitive: return "primitive";
    case GeometryKind::Diamond: return "diamond";
    case GeometryKind::FischerKoch: return "fischer_koch";
    case GeometryKind::Gyroid: return "gyroid";
    case GeometryKind::Neovius: return "neovius";
    case GeometryKind::FRD: return "frd";
  }
  throw ConfigError("unknown geometry kind");
}

inline GeometryKind parse_geometry(const std::string& name) {
  const std::string n = to_lower(trim(name));
  for (GeometryKind g : kAllGeometries) {
    if (n == geometry_name(g)) return g;
  }
  throw ConfigError("unknown geometry: '" + name + "'");
}

/// Printable offset range for one geometry. The defaults were fitted so
/// the porosity-vs-offset regression inside each window is linear
/// (R^2 > 0.999 at grid resolution 100) and matches the reference slopes;
/// they can be overridden through the run configuration.
struct OffsetWindow {
  double lo = 0.0;
  double hi = 0.0;
};

inline OffsetWindow default_offset_window(GeometryKind g) {
  switch (g) {
    case GeometryKind::Primitive: return {0.05, 0.65};
    case GeometryKind::Diamond: return {0.10, 0.80};
    case GeometryKind::FischerKoch: return {0.05, 0.45};
    case GeometryKind::Gyroid: return {0.05, 0.45};
    case GeometryKind::Neovius: return {0.90, 1.15};
    case GeometryKind::FRD: return {0.20, 1.10};
  }
  throw ConfigError("unknown geometry kind");
}

enum class SolidMode : int { Sheet = 0, Skeletal };

inline const char* solid_mode_name(SolidMode m) {
  return m == SolidMode::Sheet ? "sheet" : "skeletal";
}

struct LatticeConfig {
  GeometryKind geometry = GeometryKind::Primitive;
  int unit_cells = 2;           // periods per cube edge
  double offset_c = 0.3;        // level-set offset
  SolidMode mode = SolidMode::Sheet;
  int grid_resolution = 100;    // voxels per edge
  double domain_size = 10.0;    // mm, cube edge

  void validate() const {
    if (unit_cells < 1 || unit_cells > 4)
      throw ConfigError("unit_cells must be in {1,2,3,4}, got " + std::to_string(unit_cells));
    if (grid_resolution < 16)
      throw ConfigError("grid_resolution must be >= 16, got " + std::to_string(grid_resolution));
    if (mode == SolidMode::Sheet && !(offset_c > 0.0))
      throw ConfigError("sheet mode requires offset_c > 0");
    if (!(domain_size > 0.0)) throw ConfigError("domain_size must be positive");
  }
};

/// Sampled level-set values on a cubic voxel grid.
struct ScalarField {
  int nx = 0, ny = 0, nz = 0;
  double spacing = 0.0;  // mm per voxel
  std::vector<double> values;

  double at(int i, int j, int k) const {
    return values[(static_cast<std::size_t>(k) * ny + j) * nx + i];
  }
  double& at(int i, int j, int k) {
    return values[(static_cast<std::size_t>(k) * ny + j) * nx + i];
  }
  /// Voxel count implied by the dims.
  std::size_t size() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(nz);
  }
};

struct OccupancyGrid {
  int nx = 0, ny = 0, nz = 0;
  double spacing = 0.0;  // mm per voxel
  std::vector<std::uint8_t> solid;

  bool at(int i, int j, int k) const {
    return solid[(static_cast<std::size_t>(k) * ny + j) * nx + i] != 0;
  }
  /// Voxel count implied by the dims.
  std::size_t size() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(nz);
  }
  std::size_t solid_count() const {
    std::size_t n = 0;
    for (auto s : solid) n += s;
    return n;
  }
};

// ------------------------------------------------------------- level sets

/// Level-set value at already-scaled trigonometric arguments. The offset
/// term is deliberately not included here; it is applied at solidification
/// so one sampled field serves a whole offset sweep.
inline double level_set_value(GeometryKind g, double x, double y, double z) {
  switch (g) {
    case GeometryKind::Primitive:
      return std::cos(x) + std::cos(y) + std::cos(z);
    case GeometryKind::Diamond:
      return std::sin(x) * std::sin(y) * std::sin(z) + std::sin(x) * std::cos(y) * std::cos(z) +
             std::cos(x) * std::sin(y) * std::cos(z) + std::cos(x) * std::cos(y) * std::sin(z);
    case GeometryKind::FischerKoch:
      return std::cos(2 * x) * std::sin(y) * std::cos(z) +
             std::cos(2 * y) * std::sin(z) * std::cos(x) +
             std::cos(2 * z) * std::sin(x) * std::cos(y);
    case GeometryKind::Gyroid:
      return std::sin(x) * std::cos(y) + std::sin(z) * std::cos(x) + std::sin(y) * std::cos(z);
    case GeometryKind::Neovius:
      return 3.0 * (std::cos(2 * x) + std::cos(2 * y) + std::cos(2 * z)) +
             4.0 * std::cos(2 * x) * std::cos(2 * y) * std::cos(2 * z);
    case GeometryKind::FRD:
      return 4.0 * std::cos(x) * std::cos(y) * std::cos(z) -
             (std::cos(2 * x) * std::cos(2 * y) + std::cos(2 * x) * std::cos(2 * z) +
              std::cos(2 * y) * std::cos(2 * z));
  }
  throw ConfigError("unknown geometry kind");
}

/// Sample f(2*pi*T*x, 2*pi*T*y, 2*pi*T*z) at voxel centers of the unit cube.
inline ScalarField level_set_field(const LatticeConfig& config) {
  config.validate();
  const int n = config.grid_resolution;
  ScalarField field;
  field.nx = field.ny = field.nz = n;
  field.spacing = config.domain_size / n;
  field.values.resize(static_cast<std::size_t>(n) * n * n);

  const double scale = 2.0 * 3.14159265358979323846 * config.unit_cells;
  std::vector<double> axis(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) axis[static_cast<std::size_t>(i)] = scale * ((i + 0.5) / n);

  const GeometryKind g = config.geometry;
  parallel_for(n, [&](std::int64_t k0, std::int64_t k1) {
    for (std::int64_t k = k0; k < k1; ++k) {
      for (int j = 0; j < n; ++j) {
        double* row = &field.values[(static_cast<std::size_t>(k) * n + j) * n];
        for (int i = 0; i < n; ++i) {
          row[i] = level_set_value(g, axis[static_cast<std::size_t>(i)],
                                   axis[static_cast<std::size_t>(j)],
                                   axis[static_cast<std::size_t>(k)]);
        }
      }
    }
  });
  return field;
}

// ---------------------------------------------------------- solidification

/// Sheet rule: solid where |f| <= c (between the two offset surfaces).
/// Skeletal rule: solid where f <= c.
inline OccupancyGrid solidify(const ScalarField& field, double offset_c, SolidMode mode) {
  if (mode == SolidMode::Sheet && !(offset_c > 0.0))
    throw ConfigError("sheet mode requires offset_c > 0");
  OccupancyGrid occ;
  occ.nx = field.nx;
  occ.ny = field.ny;
  occ.nz = field.nz;
  occ.spacing = field.spacing;
  occ.solid.resize(field.size());
  if (mode == SolidMode::Sheet) {
    for (std::size_t i = 0; i < field.size(); ++i) {
      occ.solid[i] = std::abs(field.values[i]) <= offset_c ? 1 : 0;
    }
  } else {
    for (std::size_t i = 0; i < field.size(); ++i) {
      occ.solid[i] = field.values[i] <= offset_c ? 1 : 0;
    }
  }
  return occ;
}

// -------------------------------------------------------------- export

/// Raw little-endian uint8 volume plus a text sidecar describing it.
inline void write_occupancy_raw(const OccupancyGrid& occ, const std::string& path_base) {
  std::ofstream raw(path_base + ".u8", std::ios::binary);
  if (!raw) throw DataError("cannot write " + path_base + ".u8");
  raw.write(reinterpret_cast<const char*>(occ.solid.data()),
            static_cast<std::streamsize>(occ.solid.size()));
  std::string header;
  header += "format: raw_u8_le\n";
  header += "dims: " + std::to_string(occ.nx) + " " + std::to_string(occ.ny) + " " +
            std::to_string(occ.nz) + "\n";
  header += "spacing_mm: " + format_double(occ.spacing) + "\n";
  header += "order: x_fastest\n";
  write_text_file(path_base + ".txt", header);
}

}  // namespace cpga::lattice
