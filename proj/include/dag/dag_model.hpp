#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dag/channel_causal.hpp"
#include "dag/data.hpp"
#include "dag/hash.hpp"
#include "dag/temporal_causal.hpp"

namespace dag {

/// Which networks take part in a forward pass. Injection networks whose
/// discovery partner is switched off run with alpha forced to 1.
struct Wiring {
  bool temporal_injection = true;  // G_theta2
  bool channel_injection = true;   // G_theta4
  bool temporal_discovery = true;  // F_theta1 and L_t
  bool channel_discovery = true;   // F_theta3 and L_c
  std::optional<double> temporal_alpha;
  std::optional<double> channel_alpha;

  std::optional<double> effective_temporal_alpha() const {
    return temporal_discovery ? temporal_alpha : std::optional<double>(1.0);
  }
  std::optional<double> effective_channel_alpha() const {
    return channel_discovery ? channel_alpha : std::optional<double>(1.0);
  }

  bool operator==(const Wiring&) const = default;
};

struct DagConfig {
  std::size_t n_endo = 1;     // N
  std::size_t n_exo = 1;      // D
  std::size_t lookback = 96;  // T
  std::size_t horizon = 24;   // F
  std::size_t d_model = 16;
  std::size_t patch_len = 16;
  std::size_t stride = 16;
  std::size_t layers = 1;
  std::size_t heads = 1;
  std::size_t ff_width = 0;    // 0 -> 4 * d_model
  std::size_t gate_width = 0;  // 0 -> d_model
  double lambda1 = 0.5;
  double lambda2 = 0.5;
  bool double_softmax = true;
  bool normalize = true;
  std::uint64_t seed = 0;
  Wiring wiring;

  PatchGeometry geometry() const { return {lookback, patch_len, stride}; }

  NetDims dims() const {
    return {d_model, ff_width ? ff_width : 4 * d_model, gate_width ? gate_width : d_model, heads, layers,
            double_softmax};
  }

  void validate() const {
    if (!n_endo || !n_exo || !lookback || !horizon || !d_model || !layers || !heads) {
      throw ConfigError("model extents must be positive");
    }
    if (d_model % heads != 0) throw ConfigError("model.heads must divide model.d_model");
    if (!(lambda1 >= 0.0 && lambda1 <= 1.0)) throw ConfigError("model.lambda1 must lie in [0, 1]");
    if (!(lambda2 >= 0.0)) throw ConfigError("model.lambda2 must be >= 0");
    if (!wiring.temporal_injection && !wiring.channel_injection) {
      throw ConfigError("at least one injection network must be enabled");
    }
    for (auto a : {wiring.temporal_alpha, wiring.channel_alpha}) {
      if (a && !(*a >= 0.0 && *a <= 1.0)) throw ConfigError("forced alpha must lie in [0, 1]");
    }
    try {
      geometry().validate();
    } catch (const GeometryError& e) {
      throw ConfigError(std::string("model patch geometry: ") + e.what());
    }
  }
};

using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

/// Canonical dotted key/value view; the config file format and fingerprints
/// are built from it.
inline ConfigEntries entries(const DagConfig& c) {
  auto u = [](std::size_t v) { return std::to_string(v); };
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  ConfigEntries e{{"model.n_endo", u(c.n_endo)},
                  {"model.n_exo", u(c.n_exo)},
                  {"model.lookback", u(c.lookback)},
                  {"model.horizon", u(c.horizon)},
                  {"model.d_model", u(c.d_model)},
                  {"model.patch_len", u(c.patch_len)},
                  {"model.stride", u(c.stride)},
                  {"model.layers", u(c.layers)},
                  {"model.heads", u(c.heads)},
                  {"model.ff_width", u(c.ff_width)},
                  {"model.gate_width", u(c.gate_width)},
                  {"model.lambda1", format_double(c.lambda1)},
                  {"model.lambda2", format_double(c.lambda2)},
                  {"model.double_softmax", b(c.double_softmax)},
                  {"model.normalize", b(c.normalize)},
                  {"model.seed", std::to_string(c.seed)},
                  {"model.temporal_injection", b(c.wiring.temporal_injection)},
                  {"model.channel_injection", b(c.wiring.channel_injection)},
                  {"model.temporal_discovery", b(c.wiring.temporal_discovery)},
                  {"model.channel_discovery", b(c.wiring.channel_discovery)}};
  if (c.wiring.temporal_alpha) e.emplace_back("model.temporal_alpha", format_double(*c.wiring.temporal_alpha));
  if (c.wiring.channel_alpha) e.emplace_back("model.channel_alpha", format_double(*c.wiring.channel_alpha));
  return e;
}

inline std::string to_text(const ConfigEntries& e) {
  std::string s;
  for (const auto& [k, v] : e) s += k + " = " + v + "\n";
  return s;
}

struct LossTerms {
  Tensor forecast;                // L_f
  std::optional<Tensor> temporal; // L_t
  std::optional<Tensor> channel;  // L_c
  Tensor total;                   // L_f + lambda2 * (L_t + L_c)
};

/// All tensors are in the model's (instance-normalized when enabled) space;
/// `endo_stats`/`exo_stats` map them back. Disabled networks leave their
/// outputs undefined.
struct ForwardOutputs {
  Tensor y_endo_hat;   // [B x N x F] fused
  Tensor y_endo_ddot;  // temporal injection
  Tensor y_endo_dot;   // channel injection
  Tensor y_exo_hat;    // [B x D x F]
  Tensor x_endo_hat;   // [B x N x T]
  Tensor temporal_alphas;  // [B x N]
  Tensor channel_alpha;    // [B]
  std::optional<LossTerms> losses;
  std::optional<NormStats> endo_stats;
  std::optional<NormStats> exo_stats;
};

class DagModel {
 public:
  TemporalDiscoveryNet temporal_discovery;
  TemporalInjectionNet temporal_injection;
  ChannelDiscoveryNet channel_discovery;
  ChannelInjectionNet channel_injection;

  explicit DagModel(DagConfig config) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(config_.seed);
    const NetDims dims = config_.dims();
    temporal_discovery = TemporalDiscoveryNet(config_.geometry(), config_.n_exo, config_.horizon, dims, rng);
    temporal_injection = TemporalInjectionNet(temporal_discovery, config_.n_endo, dims, rng);
    channel_discovery = ChannelDiscoveryNet(config_.n_exo, config_.n_endo, config_.lookback, dims, rng);
    channel_injection = ChannelInjectionNet(channel_discovery, config_.horizon, dims, rng);
    std::set<std::string> seen;
    for (const auto& p : named_parameters()) {
      if (!seen.insert(p.name).second) throw ContractError("duplicate parameter name '" + p.name + "'");
    }
  }

  // Copies would share parameter storage.
  DagModel(const DagModel&) = delete;
  DagModel& operator=(const DagModel&) = delete;
  DagModel(DagModel&&) = default;
  DagModel& operator=(DagModel&&) = default;

  const DagConfig& config() const { return config_; }

  void set_lambdas(double lambda1, double lambda2) {
    DagConfig c = config_;
    c.lambda1 = lambda1;
    c.lambda2 = lambda2;
    c.validate();
    config_ = c;
  }

  void set_wiring(const Wiring& w) {
    DagConfig c = config_;
    c.wiring = w;
    c.validate();
    config_ = c;
  }

  /// Every trainable tensor exactly once; injected projections appear only
  /// under their discovery-network names.
  Parameters named_parameters() const {
    Parameters out;
    temporal_discovery.collect("temporal.discovery", out);
    temporal_injection.collect("temporal.injection", out);
    channel_discovery.collect("channel.discovery", out);
    channel_injection.collect("channel.injection", out);
    return out;
  }

  /// Parameters reachable from the loss under the current wiring.
  Parameters active_parameters() const {
    const Wiring& w = config_.wiring;
    Parameters out;
    if (w.temporal_discovery) temporal_discovery.collect("temporal.discovery", out);
    if (w.temporal_injection) {
      temporal_injection.collect("temporal.injection", out, !w.effective_temporal_alpha().has_value());
    }
    if (w.channel_discovery) channel_discovery.collect("channel.discovery", out);
    if (w.channel_injection) {
      channel_injection.collect("channel.injection", out, !w.effective_channel_alpha().has_value());
    }
    return out;
  }

  /// Runs the enabled networks, fuses the two endogenous forecasts with
  /// lambda1, and (given `y_endo`) computes L_f, L_t, L_c and L_total.
  /// Inputs are [C x L] or [B x C x L] in the original scale.
  ForwardOutputs forward(const Tensor& x_endo, const Tensor& x_exo, const Tensor& y_exo,
                         const Tensor& y_endo = Tensor()) const {
    const Wiring& w = config_.wiring;
    if (w.channel_injection && !y_exo.defined()) {
      throw ContractError("forward: future exogenous values are required (use predict_without_future_exo)");
    }
    ForwardOutputs out;
    const Tensor xe = lift(x_endo), xx = lift(x_exo);
    const Tensor yx = y_exo.defined() ? lift(y_exo) : Tensor();
    const Tensor ye = y_endo.defined() ? lift(y_endo) : Tensor();
    Tensor nxe = xe, nxx = xx, nyx = yx, nye = ye;
    if (config_.normalize) {
      out.endo_stats = normalize_stats(xe);
      out.exo_stats = normalize_stats(xx);
      nxe = normalize_apply(xe, *out.endo_stats);
      nxx = normalize_apply(xx, *out.exo_stats);
      if (yx.defined()) nyx = normalize_apply(yx, *out.exo_stats);
      if (ye.defined()) nye = normalize_apply(ye, *out.endo_stats);
    }

    if (w.temporal_injection) {
      auto r = temporal_injection_forward(nxe, nxx, temporal_discovery, temporal_injection,
                                          w.effective_temporal_alpha(), config_.double_softmax);
      out.y_endo_ddot = r.y_endo_ddot;
      out.temporal_alphas = r.alphas;
    }
    if (w.channel_injection) {
      auto r = channel_injection_forward(nyx, nxx, channel_discovery, channel_injection,
                                         w.effective_channel_alpha(), config_.double_softmax);
      out.y_endo_dot = r.y_endo_dot;
      out.channel_alpha = r.alpha;
    }
    if (w.temporal_discovery) out.y_exo_hat = temporal_discovery_forward(nxx, temporal_discovery).y_exo_hat;
    if (w.channel_discovery) out.x_endo_hat = channel_discovery_forward(nxx, channel_discovery).x_endo_hat;

    if (w.temporal_injection && w.channel_injection) {
      out.y_endo_hat = add(scale(out.y_endo_ddot, config_.lambda1), scale(out.y_endo_dot, 1.0 - config_.lambda1));
    } else {
      out.y_endo_hat = w.temporal_injection ? out.y_endo_ddot : out.y_endo_dot;
    }

    if (ye.defined()) {
      LossTerms losses;
      losses.forecast = l1_loss(out.y_endo_hat, nye);
      std::optional<Tensor> aux;
      if (w.temporal_discovery && nyx.defined()) {
        losses.temporal = temporal_loss(nyx, out.y_exo_hat);
        aux = *losses.temporal;
      }
      if (w.channel_discovery) {
        losses.channel = channel_loss(nxe, out.x_endo_hat);
        aux = aux ? add(*aux, *losses.channel) : *losses.channel;
      }
      losses.total = aux ? add(losses.forecast, scale(*aux, config_.lambda2)) : losses.forecast;
      out.losses = std::move(losses);
    }
    return out;
  }

  /// Batch training objective.
  LossTerms loss(const Batch& b) const { return *forward(b.x_endo, b.x_exo, b.y_exo, b.y_endo).losses; }

  /// De-normalized fused forecast [B x N x F] without graph recording.
  Tensor predict(const Tensor& x_endo, const Tensor& x_exo, const Tensor& y_exo) const {
    NoGradGuard guard;
    auto out = forward(x_endo, x_exo, y_exo);
    return restore(out.y_endo_hat, out.endo_stats, x_endo);
  }

  Tensor predict(const Batch& b) const { return predict(b.x_endo, b.x_exo, b.y_exo); }

  /// De-normalized temporal-discovery forecast of the future exogenous values.
  Tensor forecast_exo(const Tensor& x_exo) const {
    NoGradGuard guard;
    const Tensor xx = lift(x_exo);
    Tensor in = xx;
    std::optional<NormStats> stats;
    if (config_.normalize) {
      stats = normalize_stats(xx);
      in = normalize_apply(xx, *stats);
    }
    return restore(temporal_discovery_forward(in, temporal_discovery).y_exo_hat, stats, x_exo);
  }

  /// Forecast with the discovery network's Y^exo estimate substituted for the
  /// unknown future exogenous values.
  Tensor predict_without_future_exo(const Tensor& x_endo, const Tensor& x_exo) const {
    if (!config_.wiring.temporal_discovery) {
      throw ContractError("predict_without_future_exo needs the temporal discovery network");
    }
    return predict(x_endo, x_exo, forecast_exo(x_exo));
  }

  Tensor predict_without_future_exo(const Batch& b) const { return predict_without_future_exo(b.x_endo, b.x_exo); }

 private:
  DagConfig config_;

  static Tensor lift(const Tensor& x) {
    if (x.rank() == 2) return reshape(x, {1, x.dim(0), x.dim(1)});
    if (x.rank() != 3) throw DimensionError("expected [C x L] or [B x C x L], got " + shape_str(x.shape()));
    return x;
  }

  // Back to the original scale, dropping the batch axis for unbatched input.
  static Tensor restore(const Tensor& y, const std::optional<NormStats>& stats, const Tensor& like) {
    Tensor v = stats ? normalize_invert(y, *stats) : y.detach();
    if (like.rank() == 2) return reshape(v, {v.dim(1), v.dim(2)});
    return v;
  }
};

}  // namespace dag
