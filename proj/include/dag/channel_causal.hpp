#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dag/attention.hpp"
#include "dag/embedding.hpp"
#include "dag/layers.hpp"
#include "dag/temporal_causal.hpp"

namespace dag {

/// Maps channel tokens [.., D, d] to series [.., N, L]: token-wise MLP, then a
/// channel-mixing matrix (D -> N) and a temporal projection (d -> L).
struct ChannelHead {
  Mlp token_mlp;  // d -> d -> d, GELU
  Tensor mix;     // [N x D]
  Tensor proj;    // [d x L]

  ChannelHead() = default;
  ChannelHead(std::size_t d_model, std::size_t exo_channels, std::size_t endo_channels, std::size_t length,
              std::mt19937_64& rng)
      : token_mlp(d_model, d_model, d_model, Activation::Gelu, rng),
        mix(init_uniform({endo_channels, exo_channels}, exo_channels, rng)),
        proj(init_uniform({d_model, length}, d_model, rng)) {}

  Tensor operator()(const Tensor& tokens) const {
    return matmul(matmul(mix, token_mlp(tokens)), proj);
  }

  void collect(const std::string& prefix, Parameters& out) const {
    token_mlp.collect(prefix + ".mlp", out);
    out.push_back({prefix + ".mix", mix});
    out.push_back({prefix + ".proj", proj});
  }
};

/// F_theta3: historical exogenous series tokens -> historical endogenous values.
/// Attention runs across the D channel tokens.
struct ChannelDiscoveryNet {
  std::size_t exo_channels = 0;
  std::size_t endo_channels = 0;
  std::size_t lookback = 0;
  SeriesEmbedParams embed;  // T -> d
  std::vector<TrmBlockParams> blocks;
  ChannelHead head;  // -> [N x T]

  ChannelDiscoveryNet() = default;
  ChannelDiscoveryNet(std::size_t d_exo, std::size_t n_endo, std::size_t lookback_steps, const NetDims& dims,
                      std::mt19937_64& rng)
      : exo_channels(d_exo), endo_channels(n_endo), lookback(lookback_steps),
        embed(lookback_steps, dims.d_model, rng) {
    for (std::size_t l = 0; l < dims.layers; ++l) blocks.emplace_back(dims.d_model, dims.ff_width, dims.heads, rng);
    head = ChannelHead(dims.d_model, d_exo, n_endo, lookback_steps, rng);
  }

  void collect(const std::string& prefix, Parameters& out) const {
    embed.collect(prefix + ".embed", out);
    for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].collect(detail::layer_prefix(prefix, l), out, true);
    head.collect(prefix + ".head", out);
  }
};

/// G_theta4: future exogenous series tokens -> future endogenous values.
struct ChannelInjectionNet {
  std::size_t exo_channels = 0;
  std::size_t endo_channels = 0;
  std::size_t lookback = 0;
  std::size_t horizon = 0;
  SeriesEmbedParams embed;  // F -> d
  std::vector<CausalTrmBlockParams> blocks;
  GateParams gate;  // mlp_a: flattened X^exo [D*T]; mlp_b: flattened Y^exo [D*F]
  ChannelHead head;  // -> [N x F]

  ChannelInjectionNet() = default;
  ChannelInjectionNet(const ChannelDiscoveryNet& source, std::size_t horizon_steps, const NetDims& dims,
                      std::mt19937_64& rng)
      : exo_channels(source.exo_channels), endo_channels(source.endo_channels), lookback(source.lookback),
        horizon(horizon_steps), embed(horizon_steps, dims.d_model, rng) {
    for (std::size_t l = 0; l < dims.layers; ++l) {
      blocks.emplace_back(dims.d_model, dims.ff_width, dims.heads, source.blocks.at(l), rng);
    }
    gate = GateParams(exo_channels * lookback, exo_channels * horizon, dims.gate_width, rng);
    head = ChannelHead(dims.d_model, exo_channels, endo_channels, horizon, rng);
  }

  void collect(const std::string& prefix, Parameters& out, bool with_gate = true) const {
    embed.collect(prefix + ".embed", out);
    for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].collect(detail::layer_prefix(prefix, l), out);
    if (with_gate) gate.collect(prefix + ".gate", out);
    head.collect(prefix + ".head", out);
  }
};

struct ChannelDiscoveryOutput {
  Tensor x_endo_hat;           // [N x T] or [B x N x T]
  std::vector<Tensor> scores;  // per layer, [B x D x D]
};

inline ChannelDiscoveryOutput channel_discovery_forward(const Tensor& x_exo_in, const ChannelDiscoveryNet& net) {
  auto [x_exo, strip] = detail::batched(x_exo_in, "channel_discovery_forward");
  detail::expect_dims(x_exo, net.exo_channels, net.lookback, "channel_discovery_forward");
  Tensor tokens = series_embed(x_exo, net.embed);
  std::vector<Tensor> scores;
  for (const auto& block : net.blocks) {
    auto r = trm_block(tokens, block);
    tokens = r.out;
    scores.push_back(r.score);
  }
  return {detail::unbatch(net.head(tokens), strip), std::move(scores)};
}

/// L_c: mean absolute reconstruction error of the historical endogenous values.
inline Tensor channel_loss(const Tensor& x_endo, const Tensor& x_endo_hat) { return l1_loss(x_endo_hat, x_endo); }

struct ChannelInjectionOutput {
  Tensor y_endo_dot;           // [N x F] or [B x N x F]
  Tensor alpha;                // [1] or [B]
  std::vector<Tensor> fused;   // per layer, [B x D x D]
};

/// One global alpha per sample from the gate over (X^exo, Y^exo). Never reads
/// endogenous data.
inline ChannelInjectionOutput channel_injection_forward(const Tensor& y_exo_in, const Tensor& x_exo_in,
                                                        const ChannelDiscoveryNet& /*discovery*/,
                                                        const ChannelInjectionNet& net,
                                                        std::optional<double> forced_alpha = std::nullopt,
                                                        bool double_softmax = true) {
  auto [y_exo, strip] = detail::batched(y_exo_in, "channel_injection_forward");
  auto [x_exo, strip_x] = detail::batched(x_exo_in, "channel_injection_forward");
  detail::expect_dims(y_exo, net.exo_channels, net.horizon, "channel_injection_forward (future exo)");
  detail::expect_dims(x_exo, net.exo_channels, net.lookback, "channel_injection_forward (past exo)");
  if (x_exo.dim(0) != y_exo.dim(0) || strip != strip_x) {
    throw DimensionError("channel_injection_forward: batch mismatch " + shape_str(y_exo_in.shape()) + " vs " +
                         shape_str(x_exo_in.shape()));
  }
  const std::size_t batch = y_exo.dim(0);

  Tensor alpha;
  if (forced_alpha) {
    alpha = Tensor::full({batch}, *forced_alpha);
  } else {
    alpha = gate_alpha(reshape(x_exo, {batch, net.exo_channels * net.lookback}),
                       reshape(y_exo, {batch, net.exo_channels * net.horizon}), net.gate);
  }
  const Tensor alpha_seq = reshape(alpha, {batch, 1, 1});

  Tensor tokens = series_embed(y_exo, net.embed);
  std::vector<Tensor> fused;
  for (const auto& block : net.blocks) {
    auto r = causal_trm_block(tokens, block, alpha_seq, double_softmax);
    tokens = r.out;
    fused.push_back(r.fused);
  }
  Tensor alpha_out = strip ? reshape(alpha, {1}) : alpha;
  return {detail::unbatch(net.head(tokens), strip), alpha_out, std::move(fused)};
}

}  // namespace dag
