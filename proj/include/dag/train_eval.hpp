#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <new>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dag/dag_model.hpp"
#include "dag/hash.hpp"
#include "dag/optim.hpp"

namespace dag {

/// Anything the trainer can fit: a batch objective, a de-normalized
/// prediction, and the parameter lists used for updates and snapshots.
template <class M>
concept Forecaster = requires(const M& m, const Batch& b) {
  { m.loss(b) } -> std::same_as<LossTerms>;
  { m.predict(b) } -> std::same_as<Tensor>;
  { m.active_parameters() } -> std::same_as<Parameters>;
  { m.named_parameters() } -> std::same_as<Parameters>;
};

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  AdamOptions optimizer;
  std::size_t patience = 5;  // epochs without validation improvement; 0 disables early stopping
  std::uint64_t seed = 0;
  std::optional<double> lambda1;  // applied to DagModel before training
  std::optional<double> lambda2;
  bool halve_batch_on_failure = false;
  std::size_t min_batch_size = 8;
  std::size_t eval_batch_size = 256;

  void validate() const {
    if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
    if (eval_batch_size == 0) throw ConfigError("train.eval_batch_size must be >= 1");
    if (!(optimizer.lr > 0.0)) throw ConfigError("train.lr must be positive");
    if (min_batch_size == 0) throw ConfigError("train.min_batch_size must be >= 1");
  }
};

inline ConfigEntries entries(const TrainConfig& c) {
  ConfigEntries e{{"train.epochs", std::to_string(c.epochs)},
                  {"train.batch_size", std::to_string(c.batch_size)},
                  {"train.lr", format_double(c.optimizer.lr)},
                  {"train.beta1", format_double(c.optimizer.beta1)},
                  {"train.beta2", format_double(c.optimizer.beta2)},
                  {"train.eps", format_double(c.optimizer.eps)},
                  {"train.patience", std::to_string(c.patience)},
                  {"train.seed", std::to_string(c.seed)},
                  {"train.halve_batch_on_failure", c.halve_batch_on_failure ? "true" : "false"},
                  {"train.min_batch_size", std::to_string(c.min_batch_size)},
                  {"train.eval_batch_size", std::to_string(c.eval_batch_size)}};
  if (c.lambda1) e.emplace_back("train.lambda1", format_double(*c.lambda1));
  if (c.lambda2) e.emplace_back("train.lambda2", format_double(*c.lambda2));
  return e;
}

/// Window-weighted means of the loss terms over a window set. Auxiliary terms
/// are absent when the model does not compute them.
struct LossSummary {
  double forecast = 0.0;
  std::optional<double> temporal;
  std::optional<double> channel;
  double total = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  LossSummary train;      // running means over the epoch's mini-batches
  std::optional<double> val_forecast;
  std::size_t batch_size = 0;
};

struct TrainResult {
  LossSummary initial;  // full pass over the training windows before any update
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;  // L_total per optimizer step
  std::size_t best_epoch = 0;       // 0 when the initial parameters were kept
  std::optional<double> best_val;
  bool stopped_early = false;
  std::size_t steps = 0;
};

template <Forecaster M>
LossSummary mean_loss(const M& model, const WindowSet& windows, std::size_t batch_size = 256) {
  if (windows.empty()) throw ContractError("mean_loss: empty window set");
  NoGradGuard guard;
  LossSummary s;
  double t_sum = 0.0, c_sum = 0.0;
  bool has_t = false, has_c = false;
  for (std::size_t first = 0; first < windows.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, windows.size() - first);
    const LossTerms l = model.loss(windows.batch(first, count));
    const double w = static_cast<double>(count);
    s.forecast += w * l.forecast.item();
    s.total += w * l.total.item();
    if (l.temporal) has_t = true, t_sum += w * l.temporal->item();
    if (l.channel) has_c = true, c_sum += w * l.channel->item();
  }
  const double n = static_cast<double>(windows.size());
  s.forecast /= n;
  s.total /= n;
  if (has_t) s.temporal = t_sum / n;
  if (has_c) s.channel = c_sum / n;
  return s;
}

namespace detail {

inline std::vector<std::vector<double>> snapshot(const Parameters& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor.vec());
  return out;
}

inline void restore(const Parameters& params, const std::vector<std::vector<double>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    auto dst = t.mutable_values();
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

inline void check_finite(double v, std::size_t step) {
  if (!std::isfinite(v)) throw NumericError("non-finite training loss at step " + std::to_string(step));
}

}  // namespace detail

/// Mini-batch Adam over shuffled training windows. With a non-empty
/// validation set, tracks validation L_f per epoch, stops after `patience`
/// epochs without improvement and restores the best parameters.
template <Forecaster M>
TrainResult train(M& model, const WindowSet& train_windows, const WindowSet* val, const TrainConfig& cfg) {
  cfg.validate();
  if (train_windows.empty()) throw ContractError("train: the training split has no windows");
  if constexpr (requires { model.set_lambdas(0.0, 0.0); }) {
    if (cfg.lambda1 || cfg.lambda2) {
      model.set_lambdas(cfg.lambda1.value_or(model.config().lambda1), cfg.lambda2.value_or(model.config().lambda2));
    }
  }
  const bool use_val = val && !val->empty();

  TrainResult result;
  result.initial = mean_loss(model, train_windows, cfg.eval_batch_size);
  if (use_val) result.best_val = mean_loss(model, *val, cfg.eval_batch_size).forecast;
  const Parameters all = model.named_parameters();
  auto best = detail::snapshot(all);

  Parameters active = model.active_parameters();
  AdamState adam(cfg.optimizer);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t batch_size = cfg.batch_size;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    double t_sum = 0.0, c_sum = 0.0, seen = 0.0;
    bool has_t = false, has_c = false;
    for (std::size_t first = 0; first < order.size();) {
      const std::size_t count = std::min(batch_size, order.size() - first);
      try {
        const Batch b = train_windows.batch(std::span<const std::size_t>(order).subspan(first, count));
        LossTerms l = model.loss(b);
        const double total = l.total.item();
        detail::check_finite(total, result.steps);
        backward(l.total);
        adam_step(adam, active);
        const double w = static_cast<double>(count);
        rec.train.forecast += w * l.forecast.item();
        rec.train.total += w * total;
        if (l.temporal) has_t = true, t_sum += w * l.temporal->item();
        if (l.channel) has_c = true, c_sum += w * l.channel->item();
        seen += w;
        result.step_losses.push_back(total);
        ++result.steps;
        first += count;
      } catch (const std::bad_alloc&) {
        zero_grad(active);
        if (!cfg.halve_batch_on_failure || batch_size / 2 < cfg.min_batch_size) throw;
        batch_size /= 2;
      }
    }
    rec.train.forecast /= seen;
    rec.train.total /= seen;
    if (has_t) rec.train.temporal = t_sum / seen;
    if (has_c) rec.train.channel = c_sum / seen;
    rec.batch_size = batch_size;

    if (use_val) {
      const double v = mean_loss(model, *val, cfg.eval_batch_size).forecast;
      rec.val_forecast = v;
      if (v < *result.best_val) {
        result.best_val = v;
        result.best_epoch = epoch;
        best = detail::snapshot(all);
        since_best = 0;
      } else {
        ++since_best;
      }
    } else {
      result.best_epoch = epoch;
    }
    result.epochs.push_back(rec);
    if (use_val && cfg.patience > 0 && since_best >= cfg.patience) {
      result.stopped_early = true;
      break;
    }
  }
  if (use_val) detail::restore(all, best);
  return result;
}

template <Forecaster M>
TrainResult train(M& model, const DatasetBundle& data, const TrainConfig& cfg) {
  const WindowSet val = data.val();
  return train(model, data.train(), &val, cfg);
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  double mse = 0.0;
  double mae = 0.0;
  std::vector<double> mse_per_step;  // index h -> horizon step h + 1
  std::vector<double> mae_per_step;
  std::size_t windows = 0;
  double wall_seconds = 0.0;
  std::string fingerprint;
  std::optional<LossSummary> train_losses;
};

/// Accumulates squared and absolute errors of [B x N x F] predictions.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::size_t horizon) : se_(horizon, 0.0), ae_(horizon, 0.0) {}

  void add(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
      throw DimensionError("metrics: prediction " + shape_str(pred.shape()) + " vs target " +
                           shape_str(target.shape()));
    }
    const std::size_t f = se_.size();
    if (pred.shape().back() != f) throw DimensionError("metrics: horizon mismatch " + shape_str(pred.shape()));
    const auto p = pred.values();
    const auto t = target.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double e = p[i] - t[i];
      se_[i % f] += e * e;
      ae_[i % f] += std::abs(e);
    }
    rows_ += p.size() / f;
    windows_ += pred.rank() >= 3 ? pred.dim(0) : 1;
  }

  std::size_t windows() const { return windows_; }

  EvalReport report() const {
    if (rows_ == 0) throw ContractError("metrics: nothing to evaluate");
    EvalReport r;
    const double rows = static_cast<double>(rows_);
    for (std::size_t h = 0; h < se_.size(); ++h) {
      r.mse_per_step.push_back(se_[h] / rows);
      r.mae_per_step.push_back(ae_[h] / rows);
      r.mse += se_[h];
      r.mae += ae_[h];
    }
    r.mse /= rows * static_cast<double>(se_.size());
    r.mae /= rows * static_cast<double>(se_.size());
    r.windows = windows_;
    return r;
  }

 private:
  std::vector<double> se_, ae_;
  std::size_t rows_ = 0;
  std::size_t windows_ = 0;
};

inline EvalReport evaluate_predictions(const Tensor& pred, const Tensor& target) {
  MetricAccumulator acc(pred.shape().back());
  acc.add(pred, target);
  return acc.report();
}

using Predictor = std::function<Tensor(const Batch&)>;

/// MSE/MAE over every window (no drop-last) in the de-normalized space.
inline EvalReport evaluate_with(const Predictor& predict, const WindowSet& windows, std::size_t batch_size = 256) {
  if (windows.empty()) throw ContractError("evaluate: empty window set");
  if (batch_size == 0) throw ContractError("evaluate: batch size must be positive");
  const auto start = std::chrono::steady_clock::now();
  MetricAccumulator acc(windows.horizon());
  for (std::size_t first = 0; first < windows.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, windows.size() - first);
    const Batch b = windows.batch(first, count);
    acc.add(predict(b), b.y_endo);
  }
  EvalReport r = acc.report();
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

template <Forecaster M>
EvalReport evaluate(const M& model, const WindowSet& windows, std::size_t batch_size = 256) {
  return evaluate_with([&](const Batch& b) { return model.predict(b); }, windows, batch_size);
}

/// The Y^exo-free protocol: future exogenous values come from temporal discovery.
inline EvalReport evaluate_without_future_exo(const DagModel& model, const WindowSet& windows,
                                              std::size_t batch_size = 256) {
  return evaluate_with([&](const Batch& b) { return model.predict_without_future_exo(b); }, windows, batch_size);
}

inline std::string run_fingerprint(const ConfigEntries& e) { return fingerprint(to_text(e)); }

// ---------------------------------------------------------------------------
// Ablation variants

enum class AblationVariant { G2_only, G4_only, G2_plus_G4, F1_G2_temporal, F3_G4_channel, full };

inline constexpr AblationVariant kAllVariants[] = {AblationVariant::G2_only,        AblationVariant::G4_only,
                                                   AblationVariant::G2_plus_G4,     AblationVariant::F1_G2_temporal,
                                                   AblationVariant::F3_G4_channel,  AblationVariant::full};

inline std::string variant_name(AblationVariant v) {
  switch (v) {
    case AblationVariant::G2_only: return "G2_only";
    case AblationVariant::G4_only: return "G4_only";
    case AblationVariant::G2_plus_G4: return "G2_plus_G4";
    case AblationVariant::F1_G2_temporal: return "F1_G2_temporal";
    case AblationVariant::F3_G4_channel: return "F3_G4_channel";
    case AblationVariant::full: return "full";
  }
  return "unknown";
}

inline AblationVariant parse_variant(std::string_view name) {
  for (auto v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown ablation variant '" + std::string(name) + "'");
}

/// Wiring and lambda1 for one variant. Networks without a discovery partner
/// run with alpha forced to 1.
inline DagConfig variant_config(const DagConfig& base, AblationVariant v) {
  DagConfig c = base;
  Wiring& w = c.wiring;
  w = Wiring{};
  switch (v) {
    case AblationVariant::G2_only:
      w.channel_injection = w.channel_discovery = w.temporal_discovery = false;
      c.lambda1 = 1.0;
      break;
    case AblationVariant::G4_only:
      w.temporal_injection = w.temporal_discovery = w.channel_discovery = false;
      c.lambda1 = 0.0;
      break;
    case AblationVariant::G2_plus_G4:
      w.temporal_discovery = w.channel_discovery = false;
      break;
    case AblationVariant::F1_G2_temporal:
      w.channel_injection = w.channel_discovery = false;
      c.lambda1 = 1.0;
      break;
    case AblationVariant::F3_G4_channel:
      w.temporal_injection = w.temporal_discovery = false;
      c.lambda1 = 0.0;
      break;
    case AblationVariant::full:
      break;
  }
  c.validate();
  return c;
}

/// The variant whose wiring and lambda1 match `c`, if any.
inline std::optional<AblationVariant> variant_of(const DagConfig& c) {
  for (auto v : kAllVariants) {
    const DagConfig ref = variant_config(c, v);
    if (ref.wiring == c.wiring && ref.lambda1 == c.lambda1) return v;
  }
  return std::nullopt;
}

struct AblationRow {
  AblationVariant variant = AblationVariant::full;
  EvalReport report;
  TrainResult training;
};

/// Identity of one ablation row: the shared base configuration plus the
/// variant name.
inline std::string ablation_fingerprint(const DagConfig& base, const TrainConfig& tc, AblationVariant v) {
  ConfigEntries e = entries(base);
  const ConfigEntries t = entries(tc);
  e.insert(e.end(), t.begin(), t.end());
  e.emplace_back("variant", variant_name(v));
  return run_fingerprint(e);
}

/// Trains and tests each variant from the same seeds and data.
inline std::vector<AblationRow> run_ablation(const DatasetBundle& data, const DagConfig& base, const TrainConfig& tc,
                                             std::span<const AblationVariant> variants = kAllVariants) {
  std::vector<AblationRow> rows;
  const WindowSet tr = data.train(), va = data.val(), te = data.test();
  for (auto v : variants) {
    DagModel model(variant_config(base, v));
    AblationRow row;
    row.variant = v;
    row.training = train(model, tr, &va, tc);
    row.report = evaluate(model, te, tc.eval_batch_size);
    row.report.fingerprint = ablation_fingerprint(base, tc, v);
    row.report.train_losses = mean_loss(model, tr, tc.eval_batch_size);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Lookback sweep

struct SweepRow {
  std::size_t lookback = 0;
  std::optional<EvalReport> report;  // absent when skipped
  std::string skip_reason;
};

/// One model per lookback, everything else fixed. Lookbacks that leave a
/// split without windows or cannot hold one patch are skipped with a reason.
inline std::vector<SweepRow> lookback_sweep(std::shared_ptr<const RawDataset> data, const SplitRatios& ratios,
                                            std::span<const std::size_t> lookbacks, const DagConfig& base,
                                            const TrainConfig& tc) {
  std::vector<SweepRow> rows;
  for (std::size_t t : lookbacks) {
    SweepRow row;
    row.lookback = t;
    DagConfig c = base;
    c.lookback = t;
    try {
      c.validate();
    } catch (const ConfigError& e) {
      row.skip_reason = e.what();
      rows.push_back(std::move(row));
      continue;
    }
    DatasetBundle bundle(data, ratios, t, c.horizon);
    const WindowSet tr = bundle.train(), va = bundle.val(), te = bundle.test();
    if (tr.empty() || va.empty() || te.empty()) {
      row.skip_reason = "lookback " + std::to_string(t) + " leaves a split without windows";
      rows.push_back(std::move(row));
      continue;
    }
    DagModel model(c);
    train(model, tr, &va, tc);
    EvalReport r = evaluate(model, te, tc.eval_batch_size);
    ConfigEntries e = entries(c);
    const ConfigEntries te_entries = entries(tc);
    e.insert(e.end(), te_entries.begin(), te_entries.end());
    r.fingerprint = run_fingerprint(e);
    row.report = std::move(r);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Paired comparison

/// One-sided exact binomial tail P(X >= wins) for X ~ Bin(n, 1/2).
inline double sign_test_pvalue(std::size_t wins, std::size_t n) {
  if (wins > n) throw ContractError("sign test: wins exceed trials");
  if (wins == 0) return 1.0;
  double p = 0.0;
  for (std::size_t k = wins; k <= n; ++k) {
    p += std::exp(std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
                  std::lgamma(static_cast<double>(n - k) + 1.0) - static_cast<double>(n) * std::log(2.0));
  }
  return std::min(1.0, p);
}

struct SignTest {
  std::size_t wins = 0;  // pairs with a < b
  std::size_t trials = 0;  // untied pairs
  double p_value = 1.0;
};

/// Tests whether `a` tends to be smaller than `b`. Ties are dropped.
inline SignTest paired_sign_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("sign test: unpaired samples");
  SignTest s;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) continue;
    ++s.trials;
    if (a[i] < b[i]) ++s.wins;
  }
  s.p_value = sign_test_pvalue(s.wins, s.trials);
  return s;
}

inline double mean_of(std::span<const double> xs) {
  if (xs.empty()) throw ContractError("mean of an empty sample");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

}  // namespace dag
