#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dag/attention.hpp"
#include "dag/embedding.hpp"
#include "dag/layers.hpp"

namespace dag {

/// Shared widths for the networks of one model.
struct NetDims {
  std::size_t d_model = 16;
  std::size_t ff_width = 64;
  std::size_t gate_width = 16;
  std::size_t heads = 1;
  std::size_t layers = 1;
  bool double_softmax = true;
};

namespace detail {

inline std::string layer_prefix(const std::string& prefix, std::size_t layer) {
  return layer == 0 ? prefix : prefix + ".layer" + std::to_string(layer);
}

// Accepts [C x L] or [B x C x L]; returns the batched view and whether the
// input was unbatched.
inline std::pair<Tensor, bool> batched(const Tensor& x, const char* what) {
  if (x.rank() == 2) return {reshape(x, {1, x.dim(0), x.dim(1)}), true};
  if (x.rank() == 3) return {x, false};
  throw DimensionError(std::string(what) + ": expected [C x L] or [B x C x L], got " + shape_str(x.shape()));
}

inline Tensor unbatch(const Tensor& x, bool strip) {
  if (!strip) return x;
  return reshape(x, Shape(x.shape().begin() + 1, x.shape().end()));
}

inline void expect_dims(const Tensor& x, std::size_t channels, std::size_t length, const char* what) {
  if (x.dim(1) != channels || x.dim(2) != length) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(channels) + " channels x " +
                         std::to_string(length) + " steps, got " + shape_str(x.shape()));
  }
}

}  // namespace detail

/// F_theta1: historical exogenous patches -> future exogenous values.
struct TemporalDiscoveryNet {
  PatchGeometry geometry;
  std::size_t channels = 0;  // D
  std::size_t horizon = 0;   // F
  PatchEmbedParams embed;
  std::vector<TrmBlockParams> blocks;  // w_q/w_k are W_q', W_k'
  Linear head;                         // [(M*d) x F]

  TemporalDiscoveryNet() = default;
  TemporalDiscoveryNet(const PatchGeometry& geom, std::size_t exo_channels, std::size_t horizon_steps,
                       const NetDims& dims, std::mt19937_64& rng)
      : geometry(geom), channels(exo_channels), horizon(horizon_steps), embed(geom, dims.d_model, rng) {
    for (std::size_t l = 0; l < dims.layers; ++l) blocks.emplace_back(dims.d_model, dims.ff_width, dims.heads, rng);
    head = Linear(geom.patch_count() * dims.d_model, horizon_steps, rng);
  }

  void collect(const std::string& prefix, Parameters& out) const {
    embed.collect(prefix + ".embed", out);
    for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].collect(detail::layer_prefix(prefix, l), out, true);
    head.collect(prefix + ".head", out);
  }
};

/// G_theta2: historical endogenous patches -> future endogenous values, with
/// attention fused against the discovery network's projections.
struct TemporalInjectionNet {
  PatchGeometry geometry;
  std::size_t channels = 0;  // N
  std::size_t horizon = 0;
  PatchEmbedParams embed;
  std::vector<CausalTrmBlockParams> blocks;
  GateParams gate;  // mlp_a: mean exogenous lookback [T]; mlp_b: endogenous channel lookback [T]
  Linear head;

  TemporalInjectionNet() = default;
  TemporalInjectionNet(const TemporalDiscoveryNet& source, std::size_t endo_channels, const NetDims& dims,
                       std::mt19937_64& rng)
      : geometry(source.geometry), channels(endo_channels), horizon(source.horizon),
        embed(source.geometry, dims.d_model, rng) {
    for (std::size_t l = 0; l < dims.layers; ++l) {
      blocks.emplace_back(dims.d_model, dims.ff_width, dims.heads, source.blocks.at(l), rng);
    }
    gate = GateParams(geometry.lookback, geometry.lookback, dims.gate_width, rng);
    head = Linear(geometry.patch_count() * dims.d_model, horizon, rng);
  }

  void collect(const std::string& prefix, Parameters& out, bool with_gate = true) const {
    embed.collect(prefix + ".embed", out);
    for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].collect(detail::layer_prefix(prefix, l), out);
    if (with_gate) gate.collect(prefix + ".gate", out);
    head.collect(prefix + ".head", out);
  }
};

struct TemporalDiscoveryOutput {
  Tensor y_exo_hat;            // [D x F] or [B x D x F]
  Tensor tokens;               // [D x M x d] or [B x D x M x d]
  std::vector<Tensor> scores;  // per layer, [(B*D) x M x M]
};

/// Channels are processed independently with shared weights.
inline TemporalDiscoveryOutput temporal_discovery_forward(const Tensor& x_exo_in, const TemporalDiscoveryNet& net) {
  auto [x_exo, strip] = detail::batched(x_exo_in, "temporal_discovery_forward");
  detail::expect_dims(x_exo, net.channels, net.geometry.lookback, "temporal_discovery_forward");
  const std::size_t batch = x_exo.dim(0), chans = x_exo.dim(1);
  const std::size_t m = net.geometry.patch_count();
  const std::size_t d = net.embed.projection.dim(1);

  const Tensor patches = reshape(patchify(x_exo, net.geometry), {batch * chans, m, net.geometry.patch_len});
  Tensor tokens = patch_embed(patches, net.embed);
  std::vector<Tensor> scores;
  for (const auto& block : net.blocks) {
    auto r = trm_block(tokens, block);
    tokens = r.out;
    scores.push_back(r.score);
  }
  const Tensor y = net.head(reshape(tokens, {batch * chans, m * d}));
  return {detail::unbatch(reshape(y, {batch, chans, net.horizon}), strip),
          detail::unbatch(reshape(tokens, {batch, chans, m, d}), strip), std::move(scores)};
}

/// L_t: mean absolute error between future exogenous values and their forecast.
inline Tensor temporal_loss(const Tensor& y_exo, const Tensor& y_exo_hat) { return l1_loss(y_exo_hat, y_exo); }

struct TemporalInjectionOutput {
  Tensor y_endo_ddot;          // [N x F] or [B x N x F]
  Tensor alphas;               // [N] or [B x N]
  std::vector<Tensor> fused;   // per layer, [(B*N) x M x M]
};

/// Per endogenous channel i: alpha_i from the gate over (mean exogenous
/// lookback, endogenous channel i lookback), then patch tokens through the
/// causal blocks and the flatten head. `forced_alpha` bypasses the gate.
inline TemporalInjectionOutput temporal_injection_forward(const Tensor& x_endo_in, const Tensor& x_exo_in,
                                                          const TemporalDiscoveryNet& discovery,
                                                          const TemporalInjectionNet& net,
                                                          std::optional<double> forced_alpha = std::nullopt,
                                                          bool double_softmax = true) {
  auto [x_endo, strip] = detail::batched(x_endo_in, "temporal_injection_forward");
  auto [x_exo, strip_exo] = detail::batched(x_exo_in, "temporal_injection_forward");
  detail::expect_dims(x_endo, net.channels, net.geometry.lookback, "temporal_injection_forward (endo)");
  detail::expect_dims(x_exo, discovery.channels, net.geometry.lookback, "temporal_injection_forward (exo)");
  if (x_exo.dim(0) != x_endo.dim(0) || strip != strip_exo) {
    throw DimensionError("temporal_injection_forward: batch mismatch " + shape_str(x_endo_in.shape()) + " vs " +
                         shape_str(x_exo_in.shape()));
  }
  const std::size_t batch = x_endo.dim(0), chans = x_endo.dim(1);
  const std::size_t m = net.geometry.patch_count();
  const std::size_t d = net.embed.projection.dim(1);
  const std::size_t lookback = net.geometry.lookback;

  Tensor alphas;
  if (forced_alpha) {
    alphas = Tensor::full({batch, chans}, *forced_alpha);
  } else {
    const Tensor exo_mean =
        scale(sum_axis(x_exo, 1), 1.0 / static_cast<double>(discovery.channels));  // [B x T]
    alphas = gate_alpha(reshape(exo_mean, {batch, 1, lookback}), x_endo, net.gate);  // [B x N]
  }
  const Tensor alpha_seq = reshape(alphas, {batch * chans, 1, 1});

  const Tensor patches = reshape(patchify(x_endo, net.geometry), {batch * chans, m, net.geometry.patch_len});
  Tensor tokens = patch_embed(patches, net.embed);
  std::vector<Tensor> fused;
  for (const auto& block : net.blocks) {
    auto r = causal_trm_block(tokens, block, alpha_seq, double_softmax);
    tokens = r.out;
    fused.push_back(r.fused);
  }
  const Tensor y = net.head(reshape(tokens, {batch * chans, m * d}));
  return {detail::unbatch(reshape(y, {batch, chans, net.horizon}), strip), detail::unbatch(alphas, strip),
          std::move(fused)};
}

}  // namespace dag
