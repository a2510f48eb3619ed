#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpga/dataset.hpp"
#include "cpga/models.hpp"

namespace cpga::training {

using json = nlohmann::json;

// ------------------------------------------------------------------- loss

/// Graduated weights: errors in low-conversion bands cost more.
struct LossBands {
  std::array<double, 4> thresholds = {0.6, 0.7, 0.8, 0.87};
  std::array<double, 5> weights = {7.0, 6.0, 5.0, 4.0, 1.0};

  void validate() const {
    for (std::size_t i = 1; i < thresholds.size(); ++i)
      if (!(thresholds[i] > thresholds[i - 1]))
        throw ConfigError("loss thresholds must be strictly increasing");
  }

  double weight_for(double target) const {
    for (std::size_t i = 0; i < thresholds.size(); ++i)
      if (target < thresholds[i]) return weights[i];
    return weights.back();
  }
};

/// Mean over the batch of w(target) * (pred - target)^2.
inline double wmse(std::span<const double> pred, std::span<const double> target,
                   const LossBands& bands = {}) {
  if (pred.size() != target.size()) throw ConfigError("wmse: size mismatch");
  if (pred.empty()) throw ConfigError("wmse: empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - target[i];
    acc += bands.weight_for(target[i]) * e * e;
  }
  return acc / static_cast<double>(pred.size());
}

/// d(wmse)/d(pred_i) = 2 w_i (pred_i - target_i) / n
inline std::vector<double> wmse_grad(std::span<const double> pred,
                                     std::span<const double> target,
                                     const LossBands& bands = {}) {
  if (pred.size() != target.size() || pred.empty()) throw ConfigError("wmse_grad: bad batch");
  std::vector<double> g(pred.size());
  const double n = static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i)
    g[i] = 2.0 * bands.weight_for(target[i]) * (pred[i] - target[i]) / n;
  return g;
}

// --------------------------------------------------------------- schedule

struct TrainConfig {
  models::ArchKind arch = models::ArchKind::LateFilm;
  int epochs = 100;
  int batch_size = 16;
  double base_lr = 1e-3;
  double lr_decay = 0.9;
  int lr_step_epochs = 10;
  std::uint64_t seed = 0;
  LossBands bands;
  int conv1x1_channels = 64;
  std::string device_hint = "cpu";  // single logical execution stream

  void validate() const {
    bands.validate();
    if (epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch_size must be >= 1");
    if (!(base_lr > 0)) throw ConfigError("base_lr must be positive");
  }

  std::string hash() const {
    std::string s = std::string(models::arch_name(arch)) + "|" + std::to_string(epochs) + "|" +
                    std::to_string(batch_size) + "|" + format_double(base_lr) + "|" +
                    format_double(lr_decay) + "|" + std::to_string(lr_step_epochs) + "|" +
                    std::to_string(seed) + "|" + std::to_string(conv1x1_channels);
    for (double t : bands.thresholds) s += "|" + format_double(t);
    for (double w : bands.weights) s += "|" + format_double(w);
    return hex64(fnv1a64(s));
  }
};

inline double lr_at(int epoch, const TrainConfig& cfg) {
  return cfg.base_lr * std::pow(cfg.lr_decay, epoch / cfg.lr_step_epochs);
}

// ------------------------------------------------------------------- adam

template <class T>
class Adam {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit Adam(std::vector<nn::ParamRef<T>> params) : params_(std::move(params)) {
    for (const auto& p : params_) {
      m_.emplace_back(p.value->shape);
      v_.emplace_back(p.value->shape);
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, t_);
    const double bc2 = 1.0 - std::pow(beta2, t_);
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      Tensor<T>& w = *params_[pi].value;
      Tensor<T>& g = *params_[pi].grad;
      Tensor<T>& m = m_[pi];
      Tensor<T>& v = v_[pi];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * gi;
        const double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        w[i] -= static_cast<T>(lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
      }
    }
  }

 private:
  std::vector<nn::ParamRef<T>> params_;
  std::vector<Tensor<T>> m_, v_;
  long t_ = 0;
};

// ---------------------------------------------------------------- metrics

struct Residual {
  std::string id;
  double target = 0, pred = 0;
};

struct MetricsReport {
  double pcc = 0, r2 = 0, mae = 0, rmse = 0;
  std::vector<Residual> residuals;
  std::vector<double> train_loss, val_loss;  // per epoch
  int best_epoch = -1;

  json to_json() const {
    json j;
    j["pcc"] = pcc;
    j["r2"] = r2;
    j["mae"] = mae;
    j["rmse"] = rmse;
    j["best_epoch"] = best_epoch;
    json res = json::array();
    for (const auto& r : residuals) {
      res.push_back({{"id", r.id}, {"target", r.target}, {"pred", r.pred}});
    }
    j["residuals"] = res;
    j["history"] = {{"train", train_loss}, {"val", val_loss}};
    return j;
  }
};

/// PCC, R^2 (against the split's own target mean), MAE, RMSE.
inline MetricsReport compute_metrics(const std::vector<Residual>& residuals) {
  if (residuals.empty()) throw ConfigError("compute_metrics: empty evaluation");
  MetricsReport m;
  m.residuals = residuals;
  const double n = static_cast<double>(residuals.size());
  double ty = 0, tp = 0;
  for (const auto& r : residuals) {
    ty += r.target;
    tp += r.pred;
  }
  ty /= n;
  tp /= n;
  double sy = 0, sp = 0, spy = 0, ss_res = 0, abs_err = 0;
  for (const auto& r : residuals) {
    const double dy = r.target - ty, dp = r.pred - tp;
    sy += dy * dy;
    sp += dp * dp;
    spy += dy * dp;
    const double e = r.pred - r.target;
    ss_res += e * e;
    abs_err += std::abs(e);
  }
  m.pcc = (sy > 0 && sp > 0) ? spy / std::sqrt(sy * sp) : 0.0;
  m.r2 = sy > 0 ? 1.0 - ss_res / sy : 0.0;
  m.mae = abs_err / n;
  m.rmse = std::sqrt(ss_res / n);
  return m;
}

// --------------------------------------------------------------- training

/// In-memory training view of a dataset split: standardized features and
/// stacks converted to input tensors.
struct TrainSample {
  std::string id;
  std::array<float, 6> z{};
  Tensor<float> orig, conv;
  double target = 0;
};

inline Tensor<float> stack_to_tensor(const optics::ProjectionStack& s) {
  Tensor<float> t({1, s.depth(), s.height(), s.width()});
  std::size_t at = 0;
  for (const auto& layer : s.layers) {
    std::copy(layer.v.begin(), layer.v.end(), t.v.begin() + static_cast<std::ptrdiff_t>(at));
    at += layer.size();
  }
  return t;
}

struct TrainView {
  std::vector<TrainSample> samples;  // all records, index-aligned with ids
  std::map<std::string, std::size_t> index;
  std::vector<std::size_t> train, val, test;
  int depth = 0, height = 0, width = 0;

  const std::vector<std::size_t>& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ConfigError("unknown split: " + name);
  }
};

inline TrainView make_train_view(const data::Dataset& ds) {
  // leak guard: the shipped statistics must have been fit on this split's
  // training ids
  if (ds.stats.fit_scope_hash != data::id_set_hash(ds.splits.train))
    throw DataError("feature statistics were not fit on the training split");
  TrainView v;
  v.samples.reserve(ds.records.size());
  for (const auto& r : ds.records) {
    TrainSample s;
    s.id = r.entry.id;
    const auto z = data::standardize(r.numeric, ds.stats);
    for (std::size_t i = 0; i < 6; ++i) s.z[i] = static_cast<float>(z[i]);
    s.orig = stack_to_tensor(r.stack_orig);
    s.conv = stack_to_tensor(r.stack_conv);
    s.target = r.doc_target;
    v.index[s.id] = v.samples.size();
    v.samples.push_back(std::move(s));
  }
  auto fill = [&](const std::vector<std::string>& ids, std::vector<std::size_t>& out) {
    for (const auto& id : ids) {
      auto it = v.index.find(id);
      if (it == v.index.end()) throw DataError("split id missing from manifest: " + id);
      out.push_back(it->second);
    }
  };
  fill(ds.splits.train, v.train);
  fill(ds.splits.val, v.val);
  fill(ds.splits.test, v.test);
  if (!v.samples.empty()) {
    v.depth = v.samples[0].orig.shape[1];
    v.height = v.samples[0].orig.shape[2];
    v.width = v.samples[0].orig.shape[3];
  }
  return v;
}

template <class T>
models::ModelInput<T> sample_input(const TrainSample& s, const std::array<T, 6>& z,
                                   models::ArchKind arch);

inline models::ModelInput<float> sample_input_f(const TrainSample& s, models::ArchKind arch) {
  models::ModelInput<float> in;
  if (models::arch_uses_numeric(arch)) in.numeric = &s.z;
  if (models::arch_uses_images(arch)) {
    in.orig = &s.orig;
    in.conv = &s.conv;
  }
  return in;
}

struct TrainResult {
  models::Model<float> model;
  MetricsReport history;   // loss curves + best epoch
  double best_val_loss = 0;
};

/// Mini-batch training with the graduated loss, stepped learning rate,
/// per-epoch seeded shuffling, and best-validation checkpointing. Aborts
/// with a diagnostic on a non-finite loss.
inline TrainResult train(const TrainConfig& cfg, const TrainView& view) {
  cfg.validate();
  models::ModelConfig mcfg;
  mcfg.arch = cfg.arch;
  mcfg.depth = view.depth;
  mcfg.height = view.height;
  mcfg.width = view.width;
  mcfg.conv1x1_channels = cfg.conv1x1_channels;
  mcfg.init_seed = cfg.seed;
  models::Model<float> model(mcfg);

  Adam<float> opt(model.params());
  std::vector<std::size_t> order = view.train;
  MetricsReport history;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;

  // best-checkpoint snapshot buffers
  std::vector<Tensor<float>> best_params;
  auto snapshot = [&]() {
    best_params.clear();
    for (const auto& p : model.params()) best_params.push_back(*p.value);
  };

  auto eval_loss = [&](const std::vector<std::size_t>& idxs) {
    model.set_training(false);
    std::vector<double> preds, targets;
    preds.reserve(idxs.size());
    for (std::size_t i : idxs) {
      const TrainSample& s = view.samples[i];
      preds.push_back(model.forward(sample_input_f(s, cfg.arch)));
      targets.push_back(s.target);
    }
    return wmse(preds, targets, cfg.bands);
  };

  std::uint64_t step_counter = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    Rng erng = Rng::derive(cfg.seed, "epoch/" + std::to_string(epoch));
    erng.shuffle(order);
    model.set_training(true);

    double epoch_loss = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
      const double bsz = static_cast<double>(b1 - b0);
      model.zero_grads();
      double batch_loss = 0.0;
      for (std::size_t k = b0; k < b1; ++k) {
        const TrainSample& s = view.samples[order[k]];
        model.reseed_dropout(cfg.seed, "drop/" + std::to_string(step_counter) + "/" + s.id);
        const double pred = model.forward(sample_input_f(s, cfg.arch));
        const double w = cfg.bands.weight_for(s.target);
        const double err = pred - s.target;
        batch_loss += w * err * err / bsz;
        model.backward(static_cast<float>(2.0 * w * err / bsz));
      }
      if (!std::isfinite(batch_loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b0 / static_cast<std::size_t>(cfg.batch_size)) +
                           ", lr " + format_double(lr));
      }
      opt.step(lr);
      ++step_counter;
      epoch_loss += batch_loss * bsz;
    }
    history.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));

    const double vloss = view.val.empty() ? history.train_loss.back() : eval_loss(view.val);
    history.val_loss.push_back(vloss);
    if (vloss < best_val) {
      best_val = vloss;
      best_epoch = epoch;
      snapshot();
    }
  }

  // restore the best-validation parameters
  if (!best_params.empty()) {
    auto params = model.params();
    for (std::size_t i = 0; i < params.size(); ++i) *params[i].value = best_params[i];
  }
  model.set_training(false);
  history.best_epoch = best_epoch;

  return TrainResult{std::move(model), std::move(history), best_val};
}

/// Inference over a split; returns the metric suite with residuals.
inline MetricsReport evaluate(models::Model<float>& model, const TrainView& view,
                              const std::string& split_name) {
  model.set_training(false);
  std::vector<Residual> residuals;
  for (std::size_t i : view.split(split_name)) {
    const TrainSample& s = view.samples[i];
    Residual r;
    r.id = s.id;
    r.target = s.target;
    r.pred = model.forward(sample_input_f(s, model.cfg.arch));
    residuals.push_back(std::move(r));
  }
  return compute_metrics(residuals);
}

// ---------------------------------------------------------------- ablate

struct AblationRow {
  std::string arch;
  std::uint64_t seed = 0;
  double pcc = 0, r2 = 0, mae = 0, rmse = 0;
  int best_epoch = -1;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::string config_hash;

  json to_json() const {
    json j;
    j["config_hash"] = config_hash;
    j["tool_version"] = kToolVersion;
    json rows_j = json::array();
    for (const auto& r : rows) {
      rows_j.push_back({{"arch", r.arch},
                        {"seed", r.seed},
                        {"pcc", r.pcc},
                        {"r2", r.r2},
                        {"mae", r.mae},
                        {"rmse", r.rmse},
                        {"best_epoch", r.best_epoch}});
    }
    j["rows"] = rows_j;
    json means = json::object();
    std::map<std::string, std::pair<int, std::array<double, 4>>> acc;
    for (const auto& r : rows) {
      auto& a = acc[r.arch];
      ++a.first;
      a.second[0] += r.pcc;
      a.second[1] += r.r2;
      a.second[2] += r.mae;
      a.second[3] += r.rmse;
    }
    for (const auto& [name, a] : acc) {
      means[name] = {{"pcc", a.second[0] / a.first},
                     {"r2", a.second[1] / a.first},
                     {"mae", a.second[2] / a.first},
                     {"rmse", a.second[3] / a.first},
                     {"runs", a.first}};
    }
    j["mean_by_arch"] = means;
    return j;
  }

  std::string to_csv() const {
    std::string csv = "arch,seed,pcc,r2,mae,rmse,best_epoch\n";
    for (const auto& r : rows) {
      csv += r.arch + "," + std::to_string(r.seed) + "," + format_double(r.pcc) + "," +
             format_double(r.r2) + "," + format_double(r.mae) + "," + format_double(r.rmse) +
             "," + std::to_string(r.best_epoch) + "\n";
    }
    return csv;
  }

  double mean_r2(const std::string& arch) const {
    double acc = 0;
    int n = 0;
    for (const auto& r : rows)
      if (r.arch == arch) {
        acc += r.r2;
        ++n;
      }
    if (n == 0) throw ConfigError("no ablation rows for " + arch);
    return acc / n;
  }
};

/// Train arch x seed combinations and tabulate the test metrics.
/// progress, when set, is called after each run.
inline AblationReport ablate(
    const TrainView& view, const std::vector<models::ArchKind>& archs,
    const std::vector<std::uint64_t>& seeds, const TrainConfig& base_cfg,
    const std::function<void(const AblationRow&, TrainResult&)>& progress = nullptr) {
  AblationReport report;
  report.config_hash = base_cfg.hash();
  for (models::ArchKind arch : archs) {
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base_cfg;
      cfg.arch = arch;
      cfg.seed = seed;
      TrainResult result = train(cfg, view);
      const MetricsReport m = evaluate(result.model, view, "test");
      AblationRow row;
      row.arch = models::arch_name(arch);
      row.seed = seed;
      row.pcc = m.pcc;
      row.r2 = m.r2;
      row.mae = m.mae;
      row.rmse = m.rmse;
      row.best_epoch = result.history.best_epoch;
      report.rows.push_back(row);
      if (progress) progress(row, result);
    }
  }
  return report;
}

}  // namespace cpga::training
