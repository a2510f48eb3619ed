#include <doctest.h>

#include "cpga/geometry.hpp"
#include "cpga/geometry_metrics.hpp"

using namespace cpga;
using namespace cpga::lattice;

TEST_CASE("level-set values at reference points") {
  // cos(0)*3
  CHECK(level_set_value(GeometryKind::Primitive, 0, 0, 0) == doctest::Approx(3.0));
  // every gyroid term carries a sin(0)
  CHECK(level_set_value(GeometryKind::Gyroid, 0, 0, 0) == doctest::Approx(0.0));
  // x=0.5, T=1 -> X=pi
  const double pi = 3.14159265358979323846;
  CHECK(level_set_value(GeometryKind::Primitive, pi, 0, 0) == doctest::Approx(1.0));
  // diamond: every term carries a sin(0) at the origin; all-ones at pi/2
  CHECK(level_set_value(GeometryKind::Diamond, 0, 0, 0) == doctest::Approx(0.0));
  CHECK(level_set_value(GeometryKind::Diamond, pi / 2, pi / 2, pi / 2) == doctest::Approx(1.0));
  // neovius at origin: 3*3 + 4
  CHECK(level_set_value(GeometryKind::Neovius, 0, 0, 0) == doctest::Approx(13.0));
  // frd at origin: 4 - 3
  CHECK(level_set_value(GeometryKind::FRD, 0, 0, 0) == doctest::Approx(1.0));
}

TEST_CASE("geometry name round trip and unknown name") {
  for (GeometryKind g : kAllGeometries) CHECK(parse_geometry(geometry_name(g)) == g);
  CHECK(parse_geometry("Gyroid") == GeometryKind::Gyroid);
  CHECK_THROWS_AS(parse_geometry("octet"), ConfigError);
}

TEST_CASE("field sampling hits voxel centers") {
  LatticeConfig cfg;
  cfg.geometry = GeometryKind::Primitive;
  cfg.unit_cells = 1;
  cfg.grid_resolution = 16;
  cfg.domain_size = 10.0;
  const ScalarField f = level_set_field(cfg);
  CHECK(f.nx == 16);
  CHECK(f.spacing == doctest::Approx(10.0 / 16));
  const double pi = 3.14159265358979323846;
  const double x0 = 2 * pi * (0.5 / 16);
  CHECK(f.at(0, 0, 0) == doctest::Approx(3 * std::cos(x0)));
  for (double v : f.values) CHECK(std::isfinite(v));
}

TEST_CASE("config validation") {
  LatticeConfig cfg;
  cfg.unit_cells = 5;
  CHECK_THROWS_AS(level_set_field(cfg), ConfigError);
  cfg.unit_cells = 2;
  cfg.grid_resolution = 8;
  CHECK_THROWS_AS(level_set_field(cfg), ConfigError);
  cfg.grid_resolution = 32;
  cfg.offset_c = 0.0;
  CHECK_THROWS_AS(level_set_field(cfg), ConfigError);
  cfg.mode = SolidMode::Skeletal;
  CHECK_NOTHROW(level_set_field(cfg));
}

TEST_CASE("solidify rules") {
  ScalarField f;
  f.nx = f.ny = f.nz = 1;
  f.spacing = 1.0;
  f.values = {0.0};

  auto one = [&](double v, double c, SolidMode m) {
    f.values[0] = v;
    return solidify(f, c, m).at(0, 0, 0);
  };
  CHECK(one(0.0, 0.3, SolidMode::Sheet));       // |0| <= 0.3
  CHECK_FALSE(one(0.5, 0.3, SolidMode::Sheet));
  CHECK(one(-2.0, 0.3, SolidMode::Skeletal));   // f <= c
  CHECK(one(-0.3, 0.3, SolidMode::Sheet));      // boundary included
  CHECK_FALSE(one(0.31, 0.3, SolidMode::Sheet));
}

TEST_CASE("sheet occupancy symmetric in f and monotone in c") {
  LatticeConfig cfg;
  cfg.geometry = GeometryKind::Gyroid;
  cfg.unit_cells = 2;
  cfg.grid_resolution = 32;
  const ScalarField f = level_set_field(cfg);

  ScalarField fneg = f;
  for (auto& v : fneg.values) v = -v;
  const OccupancyGrid a = solidify(f, 0.4, SolidMode::Sheet);
  const OccupancyGrid b = solidify(fneg, 0.4, SolidMode::Sheet);
  CHECK(a.solid == b.solid);

  const OccupancyGrid small = solidify(f, 0.2, SolidMode::Sheet);
  const OccupancyGrid big = solidify(f, 0.6, SolidMode::Sheet);
  for (std::size_t i = 0; i < small.size(); ++i) {
    if (small.solid[i]) CHECK(big.solid[i]);
  }
  CHECK(volume_and_porosity(big).porosity <= volume_and_porosity(small).porosity);
}

TEST_CASE("volume and porosity endpoints") {
  OccupancyGrid occ;
  occ.nx = occ.ny = occ.nz = 10;
  occ.spacing = 1.0;
  occ.solid.assign(1000, 0);
  GeomMetrics m = volume_and_porosity(occ);
  CHECK(m.porosity == doctest::Approx(1.0));
  CHECK(m.solid_volume == doctest::Approx(0.0));

  occ.solid.assign(1000, 1);
  m = volume_and_porosity(occ);
  CHECK(m.porosity == doctest::Approx(0.0));
  CHECK(m.solid_volume == doctest::Approx(1000.0));
}

TEST_CASE("porosity + solid fraction = 1 exactly") {
  LatticeConfig cfg;
  cfg.geometry = GeometryKind::Diamond;
  cfg.unit_cells = 2;
  cfg.grid_resolution = 32;
  const ScalarField f = level_set_field(cfg);
  const OccupancyGrid occ = solidify(f, 0.5, SolidMode::Sheet);
  const GeomMetrics m = volume_and_porosity(occ);
  const double solid_fraction =
      static_cast<double>(occ.solid_count()) / static_cast<double>(occ.size());
  CHECK(m.porosity + solid_fraction == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("fit_line recovers exact lines") {
  const std::vector<double> x = {0.1, 0.2, 0.3, 0.4};
  std::vector<double> y;
  for (double xi : x) y.push_back(2.0 * xi);
  const LineFit f = fit_line(x, y);
  CHECK(f.slope == doctest::Approx(2.0));
  CHECK(f.intercept == doctest::Approx(0.0));
  CHECK(f.r2 == doctest::Approx(1.0));
  CHECK(f.r2_defined);

  const LineFit g = fit_line(x, {5.0, 5.0, 5.0, 5.0});
  CHECK_FALSE(g.r2_defined);
  CHECK_THROWS_AS(fit_line({1.0, 1.0, 1.0}, {1.0, 2.0, 3.0}), ConfigError);
  CHECK_THROWS_AS(fit_line({1.0, 2.0}, {1.0, 2.0}), ConfigError);
}

TEST_CASE("porosity-offset slopes match reference regressions") {
  // Desk-resolution spot check; the acceptance suite re-runs this at
  // grid resolution 100 with the tight tolerance.
  struct Row {
    GeometryKind g;
    double slope;
  };
  for (auto [g, slope] : {Row{GeometryKind::Primitive, -0.567},
                          Row{GeometryKind::Gyroid, -0.6475},
                          Row{GeometryKind::Diamond, -0.8255}}) {
    const auto window = default_offset_window(g);
    std::vector<double> cs;
    for (int i = 0; i < 7; ++i) cs.push_back(window.lo + (window.hi - window.lo) * i / 6.0);
    const LineFit f = sweep_and_fit(g, 2, cs, SweepMetric::Porosity, 64);
    CHECK(f.slope == doctest::Approx(slope).epsilon(0.15));
    CHECK(f.r2 >= 0.99);
  }
}

TEST_CASE("occupancy raw export writes volume and sidecar") {
  OccupancyGrid occ;
  occ.nx = occ.ny = occ.nz = 4;
  occ.spacing = 0.25;
  occ.solid.assign(64, 0);
  occ.solid[0] = 1;
  const std::string base = "occ_export_test";
  write_occupancy_raw(occ, base);
  const std::string raw = read_text_file(base + ".u8");
  CHECK(raw.size() == 64);
  CHECK(raw[0] == 1);
  CHECK(raw[1] == 0);
  const std::string header = read_text_file(base + ".txt");
  CHECK(header.find("dims: 4 4 4") != std::string::npos);
  CHECK(header.find("spacing_mm: 0.25") != std::string::npos);
  std::remove((base + ".u8").c_str());
  std::remove((base + ".txt").c_str());
}
