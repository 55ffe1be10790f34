#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "dag/layers.hpp"
#include "dag/train_eval.hpp"

namespace dag {

/// Fusion adapter around a linear backbone: z = W [X^endo; X^exo] + b, then
/// y = MLP(concat(z, flatten(Y^exo))).
struct BaselineConfig {
  std::size_t n_endo = 1;
  std::size_t n_exo = 1;
  std::size_t lookback = 96;
  std::size_t horizon = 24;
  std::size_t hidden = 16;      // width of z
  std::size_t mlp_width = 64;   // fusion MLP hidden width
  bool normalize = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (!n_endo || !n_exo || !lookback || !horizon || !hidden || !mlp_width) {
      throw ConfigError("baseline extents must be positive");
    }
  }

  /// Matches a DAG configuration's data geometry, width and seed.
  static BaselineConfig like(const DagConfig& c) {
    return {c.n_endo, c.n_exo, c.lookback, c.horizon, c.d_model, c.dims().ff_width, c.normalize, c.seed};
  }
};

inline ConfigEntries entries(const BaselineConfig& c) {
  return {{"baseline.n_endo", std::to_string(c.n_endo)},       {"baseline.n_exo", std::to_string(c.n_exo)},
          {"baseline.lookback", std::to_string(c.lookback)},   {"baseline.horizon", std::to_string(c.horizon)},
          {"baseline.hidden", std::to_string(c.hidden)},       {"baseline.mlp_width", std::to_string(c.mlp_width)},
          {"baseline.normalize", c.normalize ? "true" : "false"}, {"baseline.seed", std::to_string(c.seed)}};
}

class MlpFusionBaseline {
 public:
  Linear backbone;  // (N+D)*T -> hidden
  Mlp fusion;       // hidden + D*F -> mlp_width -> N*F, ReLU

  explicit MlpFusionBaseline(BaselineConfig config) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(config_.seed);
    const auto& c = config_;
    backbone = Linear((c.n_endo + c.n_exo) * c.lookback, c.hidden, rng);
    fusion = Mlp(c.hidden + c.n_exo * c.horizon, c.mlp_width, c.n_endo * c.horizon, Activation::Relu, rng);
  }

  const BaselineConfig& config() const { return config_; }

  Parameters named_parameters() const {
    Parameters out;
    backbone.collect("baseline.backbone", out);
    fusion.collect("baseline.fusion", out);
    return out;
  }

  Parameters active_parameters() const { return named_parameters(); }

  /// Normalized-space forecast [B x N x F] plus the endogenous statistics.
  std::pair<Tensor, std::optional<NormStats>> forward(const Tensor& x_endo, const Tensor& x_exo,
                                                      const Tensor& y_exo) const {
    const auto& c = config_;
    const std::size_t b = x_endo.dim(0);
    Tensor xe = x_endo, xx = x_exo, yx = y_exo;
    std::optional<NormStats> endo_stats;
    if (c.normalize) {
      endo_stats = normalize_stats(x_endo);
      const NormStats exo_stats = normalize_stats(x_exo);
      xe = normalize_apply(x_endo, *endo_stats);
      xx = normalize_apply(x_exo, exo_stats);
      yx = normalize_apply(y_exo, exo_stats);
    }
    const Tensor history = reshape(concat({xe, xx}, 1), {b, (c.n_endo + c.n_exo) * c.lookback});
    const Tensor z = backbone(history);
    const Tensor y = fusion(concat({z, reshape(yx, {b, c.n_exo * c.horizon})}, 1));
    return {reshape(y, {b, c.n_endo, c.horizon}), endo_stats};
  }

  LossTerms loss(const Batch& batch) const {
    auto [y, stats] = forward(batch.x_endo, batch.x_exo, batch.y_exo);
    const Tensor target = stats ? normalize_apply(batch.y_endo, *stats) : batch.y_endo;
    LossTerms l;
    l.forecast = l1_loss(y, target);
    l.total = l.forecast;
    return l;
  }

  Tensor predict(const Batch& batch) const {
    NoGradGuard guard;
    auto [y, stats] = forward(batch.x_endo, batch.x_exo, batch.y_exo);
    return stats ? normalize_invert(y, *stats) : y.detach();
  }

 private:
  BaselineConfig config_;
};

struct BaselineRun {
  EvalReport report;
  TrainResult training;
};

inline BaselineRun run_baseline_mlp_fusion(const DatasetBundle& data, const BaselineConfig& bc,
                                           const TrainConfig& tc) {
  MlpFusionBaseline model(bc);
  const WindowSet tr = data.train(), va = data.val(), te = data.test();
  BaselineRun run;
  run.training = train(model, tr, &va, tc);
  run.report = evaluate(model, te, tc.eval_batch_size);
  ConfigEntries e = entries(bc);
  const ConfigEntries t = entries(tc);
  e.insert(e.end(), t.begin(), t.end());
  run.report.fingerprint = run_fingerprint(e);
  run.report.train_losses = mean_loss(model, tr, tc.eval_batch_size);
  return run;
}

}  // namespace dag
