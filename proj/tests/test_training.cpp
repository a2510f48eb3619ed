#include <doctest.h>

#include "cpga/training.hpp"

using namespace cpga;
using namespace cpga::training;

namespace {

TrainView synthetic_view(int n, int side, std::uint64_t seed) {
  TrainView v;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    TrainSample s;
    s.id = "s" + std::to_string(i);
    for (auto& z : s.z) z = static_cast<float>(rng.uniform(-1, 1));
    s.orig.resize({1, side, side, side});
    s.conv.resize({1, side, side, side});
    for (auto& x : s.orig.v) x = static_cast<float>(rng.uniform());
    for (auto& x : s.conv.v) x = static_cast<float>(rng.uniform());
    s.target = 0.70 + 0.25 * rng.uniform();
    v.index[s.id] = v.samples.size();
    v.samples.push_back(std::move(s));
  }
  for (int i = 0; i < n; ++i) {
    if (i % 5 == 4) v.test.push_back(static_cast<std::size_t>(i));
    else if (i % 5 == 3) v.val.push_back(static_cast<std::size_t>(i));
    else v.train.push_back(static_cast<std::size_t>(i));
  }
  v.depth = v.height = v.width = side;
  return v;
}

}  // namespace

TEST_CASE("loss weights reproduce the five bands") {
  LossBands bands;
  // one-element batches at the band centers, each off by 0.1
  struct Case {
    double target, expect;
  };
  for (auto [target, expect] : {Case{0.55, 0.07}, Case{0.65, 0.06}, Case{0.75, 0.05},
                                Case{0.85, 0.04}, Case{0.95, 0.01}}) {
    const double pred = target + 0.1;
    CHECK(wmse({&pred, 1}, {&target, 1}, bands) == doctest::Approx(expect).epsilon(1e-12));
  }
  // all five in one batch: the mean
  std::vector<double> targets = {0.55, 0.65, 0.75, 0.85, 0.95};
  std::vector<double> preds;
  for (double t : targets) preds.push_back(t + 0.1);
  CHECK(wmse(preds, targets, bands) ==
        doctest::Approx((0.07 + 0.06 + 0.05 + 0.04 + 0.01) / 5).epsilon(1e-12));
}

TEST_CASE("loss bands straddle each threshold") {
  LossBands bands;
  const double eps = 1e-9;
  struct Edge {
    double threshold, below, above;
  };
  for (auto [thr, below, above] : {Edge{0.6, 7, 6}, Edge{0.7, 6, 5}, Edge{0.8, 5, 4},
                                   Edge{0.87, 4, 1}}) {
    CHECK(bands.weight_for(thr - eps) == below);
    CHECK(bands.weight_for(thr + eps) == above);
  }
  CHECK(bands.weight_for(0.5) == 7.0);
  CHECK(bands.weight_for(0.9) == 1.0);
}

TEST_CASE("loss is zero at the target and dominates plain mse below 0.87") {
  LossBands bands;
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const double t = rng.uniform(0.4, 0.869);
    const double p = rng.uniform(0.4, 1.0);
    const double w = wmse({&p, 1}, {&t, 1}, bands);
    const double mse = (p - t) * (p - t);
    CHECK(w >= mse - 1e-15);
    if (p == t) CHECK(w == 0.0);
  }
  const double t = 0.75, p = 0.75;
  CHECK(wmse({&p, 1}, {&t, 1}, bands) == 0.0);
  CHECK_THROWS_AS(wmse({}, {}, bands), ConfigError);
}

TEST_CASE("loss gradient matches finite differences") {
  LossBands bands;
  Rng rng(4);
  std::vector<double> preds, targets;
  for (int i = 0; i < 16; ++i) {
    targets.push_back(rng.uniform(0.5, 1.0));
    preds.push_back(targets.back() + rng.uniform(-0.2, 0.2));
  }
  const auto grad = wmse_grad(preds, targets, bands);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double h = 1e-6;
    const double x0 = preds[i];
    preds[i] = x0 + h;
    const double up = wmse(preds, targets, bands);
    preds[i] = x0 - h;
    const double dn = wmse(preds, targets, bands);
    preds[i] = x0;
    const double fd = (up - dn) / (2 * h);
    CHECK(std::abs(grad[i] - fd) / std::max(std::abs(fd), 1e-12) < 1e-4);
  }
}

TEST_CASE("learning rate schedule steps by 0.9 every 10 epochs") {
  TrainConfig cfg;
  cfg.base_lr = 1e-3;
  CHECK(lr_at(0, cfg) == doctest::Approx(1e-3));
  CHECK(lr_at(9, cfg) == doctest::Approx(1e-3));
  CHECK(lr_at(10, cfg) == doctest::Approx(0.9e-3));
  CHECK(lr_at(25, cfg) == doctest::Approx(0.81e-3));
  CHECK(lr_at(100, cfg) == doctest::Approx(1e-3 * std::pow(0.9, 10)));
}

TEST_CASE("metrics: exact predictions, mean predictor, hand-computed pcc") {
  std::vector<Residual> exact = {{"a", 0.7, 0.7}, {"b", 0.8, 0.8}, {"c", 0.9, 0.9}};
  MetricsReport m = compute_metrics(exact);
  CHECK(m.pcc == doctest::Approx(1.0));
  CHECK(m.r2 == doctest::Approx(1.0));
  CHECK(m.mae == doctest::Approx(0.0));
  CHECK(m.rmse == doctest::Approx(0.0));

  // predicting the split mean: R^2 = 0
  std::vector<Residual> mean_pred = {{"a", 0.7, 0.8}, {"b", 0.8, 0.8}, {"c", 0.9, 0.8}};
  m = compute_metrics(mean_pred);
  CHECK(m.r2 == doctest::Approx(0.0));

  // hand-computed three-point correlation:
  // y = (1,2,4), p = (2,1,3): cov = 2/3* ... use the closed form
  std::vector<Residual> hand = {{"a", 1, 2}, {"b", 2, 1}, {"c", 4, 3}};
  m = compute_metrics(hand);
  // means: y=7/3, p=2; num = sum((y-ym)(p-pm)) = (-4/3)(0)+(-1/3)(-1)+(5/3)(1) = 2
  // den = sqrt(sum(y-ym)^2 * sum(p-pm)^2) = sqrt((16/9+1/9+25/9) * 2) = sqrt(42/9*2)
  CHECK(m.pcc == doctest::Approx(2.0 / std::sqrt(42.0 / 9.0 * 2.0)));

  CHECK_THROWS_AS(compute_metrics({}), ConfigError);
}

TEST_CASE("metric inequalities hold on random prediction vectors") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Residual> rs(20);
    for (int i = 0; i < 20; ++i) {
      rs[static_cast<std::size_t>(i)].target = rng.uniform(0.6, 1.0);
      rs[static_cast<std::size_t>(i)].pred = rng.uniform(0.6, 1.0);
    }
    const MetricsReport m = compute_metrics(rs);
    CHECK(m.rmse >= m.mae - 1e-12);
    CHECK(m.mae >= 0.0);
    CHECK(m.r2 <= m.pcc * m.pcc + 1e-9);
  }
}

TEST_CASE("adam minimizes a quadratic") {
  Tensor<float> w({4}), g({4});
  w.v = {5.0f, -3.0f, 2.0f, 0.5f};
  std::vector<nn::ParamRef<float>> params = {{"w", &w, &g}};
  Adam<float> opt(params);
  for (int i = 0; i < 500; ++i) {
    for (std::size_t j = 0; j < 4; ++j) g[j] = 2.0f * w[j];
    opt.step(0.05);
  }
  for (float x : w.v) CHECK(std::abs(x) < 0.05f);
}

TEST_CASE("training is deterministic and improves the numeric baseline") {
  TrainView view = synthetic_view(20, 16, 7);
  // targets depend on z[0] so the numeric model has something to learn
  for (auto& s : view.samples) s.target = 0.8 + 0.05 * s.z[0];

  TrainConfig cfg;
  cfg.arch = models::ArchKind::NumericOnly;
  cfg.epochs = 40;
  cfg.batch_size = 4;
  cfg.seed = 5;

  TrainResult a = train(cfg, view);
  TrainResult b = train(cfg, view);
  CHECK(a.history.train_loss == b.history.train_loss);
  CHECK(a.history.val_loss == b.history.val_loss);
  CHECK(a.history.best_epoch == b.history.best_epoch);

  const MetricsReport ea = evaluate(a.model, view, "test");
  const MetricsReport eb = evaluate(b.model, view, "test");
  for (std::size_t i = 0; i < ea.residuals.size(); ++i)
    CHECK(ea.residuals[i].pred == eb.residuals[i].pred);

  // loss should drop substantially on this learnable toy problem
  CHECK(a.history.train_loss.back() < 0.5 * a.history.train_loss.front());
  CHECK(a.history.best_epoch >= 0);
}

TEST_CASE("image-pathway training smoke run") {
  TrainView view = synthetic_view(8, 16, 11);
  TrainConfig cfg;
  cfg.arch = models::ArchKind::LateFilm;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 3;
  TrainResult r = train(cfg, view);
  CHECK(r.history.train_loss.size() == 2);
  CHECK(std::isfinite(r.history.train_loss.back()));
  const MetricsReport m = evaluate(r.model, view, "test");
  CHECK(std::isfinite(m.rmse));
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  TrainView view = synthetic_view(8, 16, 13);
  // one corrupted training target turns the loss into NaN
  view.samples[view.train[0]].target = std::nan("");
  TrainConfig cfg;
  cfg.arch = models::ArchKind::NumericOnly;
  cfg.epochs = 5;
  cfg.batch_size = 4;
  cfg.seed = 1;
  try {
    (void)train(cfg, view);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch") != std::string::npos);
    CHECK(msg.find("lr") != std::string::npos);
    CHECK(msg.find("batch") != std::string::npos);
  }
}

TEST_CASE("ablation table aggregates runs deterministically") {
  TrainView view = synthetic_view(15, 16, 17);
  for (auto& s : view.samples) s.target = 0.8 + 0.04 * s.z[1];
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 4;

  const std::vector<models::ArchKind> archs = {models::ArchKind::NumericOnly};
  const std::vector<std::uint64_t> seeds = {1, 2};
  const AblationReport ra = ablate(view, archs, seeds, cfg);
  const AblationReport rb = ablate(view, archs, seeds, cfg);
  CHECK(ra.rows.size() == 2);
  CHECK(ra.to_json().dump() == rb.to_json().dump());
  CHECK(ra.to_csv() == rb.to_csv());
  CHECK(std::isfinite(ra.mean_r2("numeric_only")));
  CHECK_THROWS_AS(ra.mean_r2("late_film"), ConfigError);
}

TEST_CASE("train view rejects statistics fit off the training split") {
  namespace fs = std::filesystem;
  data::DatasetParams params;
  params.grid.geometries = {lattice::GeometryKind::Primitive};
  params.grid.unit_cells = {1};
  params.grid.layer_heights = {0.10};
  params.grid_resolution = 32;
  params.out_px = 16;
  params.depth_layers = 16;
  params.seed = 2;
  params.out_dir = "ds_guard_test";
  fs::remove_all(params.out_dir);
  data::build_dataset(params);
  data::Dataset ds = data::load_dataset(params.out_dir);
  CHECK_NOTHROW(make_train_view(ds));
  ds.stats.fit_scope_hash ^= 1;  // simulate stats fit elsewhere
  CHECK_THROWS_AS(make_train_view(ds), DataError);
  fs::remove_all(params.out_dir);
}
