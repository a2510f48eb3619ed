#include <doctest.h>

#include <cstdio>

#include "cpga/geometry.hpp"
#include "cpga/geometry_metrics.hpp"
#include "cpga/marching_cubes.hpp"

using namespace cpga;
using namespace cpga::lattice;

namespace {

ScalarField sphere_field(int res, double domain, double r0) {
  ScalarField f;
  f.nx = f.ny = f.nz = res;
  f.spacing = domain / res;
  f.values.resize(static_cast<std::size_t>(res) * res * res);
  const double c0 = domain / 2;
  for (int k = 0; k < res; ++k)
    for (int j = 0; j < res; ++j)
      for (int i = 0; i < res; ++i) {
        const double x = (i + 0.5) * f.spacing - c0;
        const double y = (j + 0.5) * f.spacing - c0;
        const double z = (k + 0.5) * f.spacing - c0;
        f.at(i, j, k) = r0 - std::sqrt(x * x + y * y + z * z);
      }
  return f;
}

}  // namespace

TEST_CASE("surface area of explicit triangles") {
  TriMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  m.triangles = {{0, 1, 2}};
  CHECK(surface_area(m) == doctest::Approx(0.5));

  TriMesh empty;
  CHECK(surface_area(empty) == doctest::Approx(0.0));
  CHECK(empty.empty());
}

TEST_CASE("constant field produces empty mesh") {
  ScalarField f;
  f.nx = f.ny = f.nz = 8;
  f.spacing = 1.0;
  f.values.assign(512, 0.0);
  const TriMesh m = marching_cubes(f, 0.3);
  CHECK(m.empty());  // c - |f| = 0.3 everywhere: no sign change

  f.values.assign(512, 9.0);  // entirely void
  CHECK(marching_cubes(f, 0.3).empty());
}

TEST_CASE("marching cubes requires two voxels per axis") {
  ScalarField f;
  f.nx = f.ny = f.nz = 1;
  f.spacing = 1.0;
  f.values = {0.0};
  CHECK_THROWS_AS(marching_cubes(f, 0.3), ConfigError);
}

TEST_CASE("sphere mesh: area, closedness, Euler characteristic, volume") {
  const double r0 = 3.0;
  const ScalarField f = sphere_field(100, 10.0, r0);
  const TriMesh m = marching_cubes_level(f, 0.0);
  REQUIRE_FALSE(m.empty());

  const double area = surface_area(m);
  const double expect_area = 4.0 * 3.14159265358979323846 * r0 * r0;
  CHECK(std::abs(area - expect_area) / expect_area < 0.02);

  // interior surface: closed orientable, sphere topology
  CHECK(unpaired_edge_count(m) == 0);
  std::size_t edges = m.triangles.size() * 3 / 2;
  const auto euler = static_cast<std::ptrdiff_t>(m.vertices.size()) -
                     static_cast<std::ptrdiff_t>(edges) +
                     static_cast<std::ptrdiff_t>(m.triangles.size());
  CHECK(euler == 2);

  const double vol = std::abs(signed_volume(m));
  const double expect_vol = 4.0 / 3.0 * 3.14159265358979323846 * r0 * r0 * r0;
  CHECK(std::abs(vol - expect_vol) / expect_vol < 0.02);
}

TEST_CASE("sphere error decreases with resolution") {
  const double r0 = 3.0;
  const double expect_area = 4.0 * 3.14159265358979323846 * r0 * r0;
  double err50 = 0, err100 = 0;
  for (int res : {50, 100}) {
    const TriMesh m = marching_cubes_level(sphere_field(res, 10.0, r0), 0.0);
    const double e = std::abs(surface_area(m) - expect_area) / expect_area;
    (res == 50 ? err50 : err100) = e;
  }
  CHECK(err100 < err50);
}

TEST_CASE("sheet mesh is watertight away from the domain boundary") {
  LatticeConfig cfg;
  cfg.geometry = GeometryKind::Primitive;
  cfg.unit_cells = 1;
  cfg.grid_resolution = 64;
  const ScalarField f = level_set_field(cfg);

  const TriMesh open_mesh = marching_cubes(f, 0.3, false);
  REQUIRE_FALSE(open_mesh.empty());
  for (const auto& t : open_mesh.triangles) {
    for (int idx : t) {
      CHECK(idx >= 0);
      CHECK(idx < static_cast<int>(open_mesh.vertices.size()));
    }
  }

  // closing the boundary caps every open edge
  const TriMesh closed_mesh = marching_cubes(f, 0.3, true);
  CHECK(unpaired_edge_count(closed_mesh) == 0);

  // open-mesh boundary edges all sit on the sampling boundary planes
  const double eps = 1e-9;
  const double lo = 0.5 * f.spacing, hi = (f.nx - 0.5) * f.spacing;
  std::size_t interior_unpaired = 0;
  {
    std::unordered_map<std::uint64_t, int> cnt;
    auto key = [](int a, int b) {
      return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(std::min(a, b))) << 32) |
             static_cast<std::uint32_t>(std::max(a, b));
    };
    for (const auto& t : open_mesh.triangles)
      for (int e = 0; e < 3; ++e) {
        const int a = t[e], b = t[(e + 1) % 3];
        cnt[key(a, b)] += (a < b) ? 1 : -1;
      }
    for (const auto& [k, v] : cnt) {
      if (v == 0) continue;
      const int a = static_cast<int>(k >> 32), b = static_cast<int>(k & 0xffffffffu);
      for (int idx : {a, b}) {
        const auto& p = open_mesh.vertices[static_cast<std::size_t>(idx)];
        const bool on_boundary = std::abs(p[0] - lo) < eps || std::abs(p[0] - hi) < eps ||
                                 std::abs(p[1] - lo) < eps || std::abs(p[1] - hi) < eps ||
                                 std::abs(p[2] - lo) < eps || std::abs(p[2] - hi) < eps;
        if (!on_boundary) ++interior_unpaired;
      }
    }
  }
  CHECK(interior_unpaired == 0);
}

TEST_CASE("voxel volume and closed-mesh volume agree on a sheet solid") {
  LatticeConfig cfg;
  cfg.geometry = GeometryKind::Gyroid;
  cfg.unit_cells = 2;
  cfg.grid_resolution = 100;
  const ScalarField f = level_set_field(cfg);
  const double c = 0.35;

  const GeomMetrics voxel = volume_and_porosity(solidify(f, c, SolidMode::Sheet));
  const TriMesh closed_mesh = marching_cubes(f, c, true);
  const double mesh_vol = std::abs(signed_volume(closed_mesh));
  CHECK(std::abs(mesh_vol - voxel.solid_volume) / voxel.solid_volume < 0.05);
}

TEST_CASE("lattice_metrics combines area, volume, porosity, SA/V") {
  LatticeConfig cfg;
  cfg.geometry = GeometryKind::Primitive;
  cfg.unit_cells = 2;
  cfg.grid_resolution = 48;
  const ScalarField f = level_set_field(cfg);
  const GeomMetrics m = lattice_metrics(f, 0.4, SolidMode::Sheet);
  CHECK(m.surface_area > 0);
  CHECK(m.solid_volume > 0);
  CHECK(m.porosity > 0);
  CHECK(m.porosity < 1);
  CHECK(m.sa_to_v == doctest::Approx(m.surface_area / m.solid_volume));
  CHECK(m.porosity ==
        doctest::Approx(1.0 - m.solid_volume / (10.0 * 10.0 * 10.0)).epsilon(1e-9));
}

TEST_CASE("skeletal metrics") {
  LatticeConfig cfg;
  cfg.geometry = GeometryKind::Gyroid;
  cfg.unit_cells = 2;
  cfg.grid_resolution = 48;
  cfg.mode = SolidMode::Skeletal;
  const ScalarField f = level_set_field(cfg);
  const GeomMetrics m = lattice_metrics(f, 0.0, SolidMode::Skeletal);
  // gyroid at c=0 splits the cube in half
  CHECK(m.porosity == doctest::Approx(0.5).epsilon(0.02));
  CHECK(m.surface_area > 0);
}

TEST_CASE("stl export round trip") {
  TriMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  m.triangles = {{0, 1, 2}, {0, 3, 1}};
  const std::string path = "mesh_export_test.stl";
  write_stl_ascii(m, path, "probe");
  const std::string text = read_text_file(path);
  CHECK(text.rfind("solid probe", 0) == 0);
  CHECK(text.find("endsolid probe") != std::string::npos);
  std::size_t facets = 0, pos = 0;
  while ((pos = text.find("facet normal", pos)) != std::string::npos) {
    ++facets;
    pos += 12;
  }
  CHECK(facets == 2);
  std::remove(path.c_str());
}
