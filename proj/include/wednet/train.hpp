#pragma once

// Training loop, evaluation protocol and ablation runner.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "wednet/model.hpp"
#include "wednet/optim.hpp"

namespace wednet {

struct TrainConfig {
  int batch_size = 128;
  double lr = 1e-3;
  double weight_decay = 5e-4;
  int epochs = 30;
  double eta = 0.1;
  double warmup = 0.3;
  double initial_div = 25.0;
  double final_div = 25.0;
  int patience = 10;
  int eval_batch_size = 64;
  std::uint64_t seed = 0;
  // Shape fields (steps, horizon, parcels, feature counts) are taken from the data.
  ModelConfig model;

  Variant variant() const { return model.variant; }

  void validate() const {
    if (batch_size <= 0 || eval_batch_size <= 0) throw ValidationError("train config: batch sizes must be positive");
    if (!(lr > 0)) throw ValidationError("train config: lr must be positive");
    if (!(weight_decay >= 0)) throw ValidationError("train config: weight_decay must be >= 0");
    if (epochs <= 0) throw ValidationError("train config: epochs must be positive");
    if (!(eta >= 0)) throw ValidationError("train config: eta must be >= 0");
    if (!(warmup > 0 && warmup < 1)) throw ValidationError("train config: warmup must be in (0, 1)");
    if (!(initial_div > 0 && final_div > 0)) throw ValidationError("train config: LR divisors must be positive");
    if (patience <= 0) throw ValidationError("train config: patience must be positive");
  }

  json to_json() const {
    json m = model.to_json();
    for (const char* k : {"steps", "horizon", "parcels", "flow_features", "weather_features"}) m.erase(k);
    return {{"batch_size", batch_size}, {"lr", lr},           {"weight_decay", weight_decay}, {"epochs", epochs},
            {"eta", eta},               {"warmup", warmup},   {"initial_div", initial_div},   {"final_div", final_div},
            {"patience", patience},     {"eval_batch_size", eval_batch_size}, {"seed", seed}, {"model", m}};
  }

  /// Stable hash of every field, as 16 hex digits.
  std::string hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json().dump())));
    return buf;
  }
};

/// Reduced configuration used for single-core directional experiments.
inline TrainConfig desk_config() {
  TrainConfig c;
  c.batch_size = 32;
  c.lr = 3e-3;
  c.epochs = 12;
  c.patience = 4;
  c.model.embed = {8, 4, 4, 4, 4};
  c.model.heads = 2;
  c.model.blocks = 1;
  c.model.ffn_factor = 2;
  c.model.memory_slots = 16;
  c.model.predictor_hidden = 64;
  c.model.disc_hidden = 16;
  return c;
}

// ---------------------------------------------------------------------------
// Metrics

struct ConditionMetrics {
  double mae = 0;
  double rmse = 0;
  long samples = 0;
  long entries = 0;

  json to_json() const { return {{"mae", mae}, {"rmse", rmse}, {"samples", samples}, {"entries", entries}}; }
  bool operator==(const ConditionMetrics&) const = default;
};

/// Running absolute and squared error sums.
class ErrorAccumulator {
 public:
  void add(double err) {
    abs_ += std::abs(err);
    sq_ += err * err;
    ++entries_;
  }
  void add_sample() { ++samples_; }

  ConditionMetrics finish() const {
    ConditionMetrics m;
    m.samples = samples_;
    m.entries = entries_;
    if (entries_ > 0) {
      m.mae = abs_ / static_cast<double>(entries_);
      m.rmse = std::sqrt(sq_ / static_cast<double>(entries_));
    }
    return m;
  }

 private:
  double abs_ = 0, sq_ = 0;
  long entries_ = 0, samples_ = 0;
};

struct MetricsReport {
  ConditionMetrics normal, extreme, overall;
  std::string config_hash;
  std::string method;
  double wall_time_s = 0;

  json to_json() const {
    return {{"method", method},
            {"normal", normal.to_json()},
            {"extreme", extreme.to_json()},
            {"overall", overall.to_json()},
            {"config_hash", config_hash},
            {"wall_time_s", wall_time_s}};
  }

  /// Method x condition x metric rows.
  std::string table() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-20s extreme MAE %.4f RMSE %.4f (n=%ld) | normal MAE %.4f RMSE %.4f (n=%ld)", method.c_str(),
                  extreme.mae, extreme.rmse, extreme.samples, normal.mae, normal.rmse, normal.samples);
    return buf;
  }
};

/// Equality of everything except wall time.
inline bool same_metrics(const MetricsReport& a, const MetricsReport& b) {
  return a.normal == b.normal && a.extreme == b.extreme && a.overall == b.overall && a.config_hash == b.config_hash && a.method == b.method;
}

template <typename S>
MetricsReport evaluate(const WedNet<S>& model, const Normalizer& nz, const std::vector<SampleWindow>& windows, int batch_size = 64,
                       const std::string& config_hash = "") {
  if (windows.empty()) throw ValidationError("evaluate: no windows");
  const auto t0 = std::chrono::steady_clock::now();
  ErrorAccumulator acc[2], all;
  const int df = model.config().flow_features, H = model.config().horizon, N = model.config().parcels;
  for (std::size_t start = 0; start < windows.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<const SampleWindow*> chunk;
    for (std::size_t i = start; i < std::min(windows.size(), start + static_cast<std::size_t>(batch_size)); ++i) chunk.push_back(&windows[i]);
    const auto batch = make_batch<S>(chunk, nz);
    ad::Tape<S> tape(false);
    const auto r = model.forward(tape, batch, 0.0);
    const auto& pred = r.pred.value();
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const SampleWindow& w = *chunk[b];
      auto& c = acc[w.extreme() ? 1 : 0];
      c.add_sample();
      all.add_sample();
      for (int n = 0; n < N; ++n)
        for (int t = 0; t < H; ++t)
          for (int f = 0; f < df; ++f) {
            const double y_hat = nz.flow_out(static_cast<double>(pred(static_cast<Eigen::Index>(b) * N + n, t * df + f)), f);
            const double err = y_hat - static_cast<double>(w.flow_future(t, n, f));
            c.add(err);
            all.add(err);
          }
    }
  }
  MetricsReport rep;
  rep.normal = acc[0].finish();
  rep.extreme = acc[1].finish();
  rep.overall = all.finish();
  rep.config_hash = config_hash;
  rep.method = to_string(model.config().variant);
  rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

/// Predict-last-value baseline: every future step repeats the final observed step.
inline MetricsReport persistence_baseline(const std::vector<SampleWindow>& windows) {
  ErrorAccumulator acc[2], all;
  for (const auto& w : windows) {
    auto& c = acc[w.extreme() ? 1 : 0];
    c.add_sample();
    all.add_sample();
    const int last = w.steps() - 1;
    for (int t = 0; t < w.horizon(); ++t)
      for (int n = 0; n < w.parcels(); ++n)
        for (int f = 0; f < w.flow_future.dim(2); ++f) {
          const double err = static_cast<double>(w.flow_hist(last, n, f)) - static_cast<double>(w.flow_future(t, n, f));
          c.add(err);
          all.add(err);
        }
  }
  MetricsReport rep;
  rep.normal = acc[0].finish();
  rep.extreme = acc[1].finish();
  rep.overall = all.finish();
  rep.method = "persistence";
  return rep;
}

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
  int epoch = 0;
  double loss_pre = 0;
  double loss_dis = 0;
  double total = 0;
  double valid_mae = 0;
  double seconds = 0;

  json to_json() const {
    return {{"epoch", epoch}, {"loss_pre", loss_pre}, {"loss_dis", loss_dis}, {"total", total}, {"valid_mae", valid_mae}, {"seconds", seconds}};
  }
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  std::vector<double> lr;        // per optimizer step
  std::vector<double> step_pre;  // per-step prediction loss
  std::vector<double> step_total;
  int best_epoch = -1;
  double best_valid_mae = std::numeric_limits<double>::infinity();
  bool diverged = false;
  std::string divergence;

  json to_json() const {
    json e = json::array();
    for (const auto& x : epochs) e.push_back(x.to_json());
    return {{"epochs", e},           {"lr", lr},           {"step_loss_pre", step_pre}, {"step_total", step_total},
            {"best_epoch", best_epoch}, {"best_valid_mae", best_valid_mae}, {"diverged", diverged}, {"divergence", divergence}};
  }
};

template <typename S>
struct TrainResult {
  std::unique_ptr<WedNet<S>> model;
  Normalizer normalizer;
  TrainLog log;
};

/// Fills the data-dependent shape fields of the model config.
inline ModelConfig shape_model(ModelConfig mc, const SampleWindow& w) {
  mc.steps = w.steps();
  mc.horizon = w.horizon();
  mc.parcels = w.parcels();
  mc.flow_features = w.flow_hist.dim(2);
  mc.weather_features = w.weather_hist.dim(2);
  return mc;
}

template <typename S = float>
TrainResult<S> train(const TrainConfig& cfg, const std::vector<SampleWindow>& train_set, const std::vector<SampleWindow>& valid_set,
                     const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty() || valid_set.empty()) throw ValidationError("train: train and validation splits must be non-empty");
  TrainResult<S> res;
  res.normalizer = Normalizer::fit(train_set);
  res.model = std::make_unique<WedNet<S>>(shape_model(cfg.model, train_set.front()), cfg.seed);
  WedNet<S>& model = *res.model;
  auto& store = model.params();
  AdamW<S> opt(store, {0.9, 0.999, 1e-8, cfg.weight_decay});

  const std::size_t n = train_set.size();
  const long per_epoch = static_cast<long>((n + static_cast<std::size_t>(cfg.batch_size) - 1) / static_cast<std::size_t>(cfg.batch_size));
  const OneCycle schedule(cfg.lr, per_epoch * cfg.epochs, cfg.warmup, cfg.initial_div, cfg.final_div);
  const std::string hash = cfg.hash();

  std::vector<std::size_t> order(n);
  std::vector<Mat<S>> best = store.snapshot();
  int stale = 0;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs && !res.log.diverged; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, fnv1a("shuffle") + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochLog el;
    el.epoch = epoch;
    long batches = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<const SampleWindow*> chunk;
      for (std::size_t i = start; i < std::min(n, start + static_cast<std::size_t>(cfg.batch_size)); ++i) chunk.push_back(&train_set[order[i]]);
      const auto batch = make_batch<S>(chunk, res.normalizer);
      ad::Tape<S> tape(true, derive_seed(cfg.seed, fnv1a("dropout") + static_cast<std::uint64_t>(step)));
      store.zero_grad();
      ForwardResult<S> fr;
      try {
        fr = model.forward(tape, batch, cfg.eta);
      } catch (const NumericalError& e) {
        res.log.diverged = true;
        res.log.divergence = "step " + std::to_string(step) + ": " + e.what();
        break;
      }
      if (!std::isfinite(fr.report.total)) {
        res.log.diverged = true;
        res.log.divergence = "step " + std::to_string(step) + ": non-finite loss";
        break;
      }
      tape.backward(fr.total);
      bool finite = true;
      for (const auto& p : store.all()) finite = finite && p.grad.allFinite();
      if (!finite) {
        res.log.diverged = true;
        res.log.divergence = "step " + std::to_string(step) + ": non-finite gradient";
        break;
      }
      const double lr = schedule(step);
      opt.step(lr);
      res.log.lr.push_back(lr);
      res.log.step_pre.push_back(fr.report.loss_pre);
      res.log.step_total.push_back(fr.report.total);
      el.loss_pre += fr.report.loss_pre;
      el.loss_dis += fr.report.loss_dis;
      el.total += fr.report.total;
      ++batches;
      ++step;
    }
    if (res.log.diverged) break;  // parameters hold the last finite update
    el.loss_pre /= static_cast<double>(batches);
    el.loss_dis /= static_cast<double>(batches);
    el.total /= static_cast<double>(batches);
    el.valid_mae = evaluate(model, res.normalizer, valid_set, cfg.eval_batch_size, hash).overall.mae;
    el.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.epochs.push_back(el);
    if (on_epoch) on_epoch(el);
    if (el.valid_mae < res.log.best_valid_mae) {
      res.log.best_valid_mae = el.valid_mae;
      res.log.best_epoch = epoch;
      best = store.snapshot();
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  if (!res.log.diverged) store.restore(best);
  return res;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationRow {
  Variant variant = Variant::full;
  std::vector<MetricsReport> runs;  // one per seed
  double extreme_mae_mean = 0, extreme_mae_std = 0;
  double normal_mae_mean = 0, normal_mae_std = 0;
  double extreme_rmse_mean = 0, normal_rmse_mean = 0;

  json to_json() const {
    json r = json::array();
    for (const auto& m : runs) r.push_back(m.to_json());
    return {{"variant", to_string(variant)},
            {"extreme_mae_mean", extreme_mae_mean},
            {"extreme_mae_std", extreme_mae_std},
            {"normal_mae_mean", normal_mae_mean},
            {"normal_mae_std", normal_mae_std},
            {"extreme_rmse_mean", extreme_rmse_mean},
            {"normal_rmse_mean", normal_rmse_mean},
            {"runs", r}};
  }
};

/// Sample mean and (n-1) standard deviation; std is 0 for a single value.
inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0, 0};
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0};
  double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

inline std::vector<AblationRow> run_ablation(const TrainConfig& base, const Split& data, const std::vector<Variant>& variants,
                                             const std::vector<std::uint64_t>& seeds,
                                             const std::function<void(Variant, std::uint64_t, const MetricsReport&)>& on_run = {}) {
  if (seeds.empty()) throw ValidationError("run_ablation: at least one seed is required");
  std::vector<AblationRow> rows;
  for (Variant v : variants) {
    AblationRow row;
    row.variant = v;
    std::vector<double> em, nm, er, nr;
    for (std::uint64_t s : seeds) {
      TrainConfig cfg = base;
      cfg.seed = s;
      cfg.model.variant = v;
      if (v == Variant::no_discriminator) cfg.eta = 0.0;
      auto res = train<float>(cfg, data.train, data.valid);
      auto rep = evaluate(*res.model, res.normalizer, data.test, cfg.eval_batch_size, cfg.hash());
      if (on_run) on_run(v, s, rep);
      em.push_back(rep.extreme.mae);
      nm.push_back(rep.normal.mae);
      er.push_back(rep.extreme.rmse);
      nr.push_back(rep.normal.rmse);
      row.runs.push_back(std::move(rep));
    }
    std::tie(row.extreme_mae_mean, row.extreme_mae_std) = mean_std(em);
    std::tie(row.normal_mae_mean, row.normal_mae_std) = mean_std(nm);
    row.extreme_rmse_mean = mean_std(er).first;
    row.normal_rmse_mean = mean_std(nr).first;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace wednet
