#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "dag/layers.hpp"
#include "dag/ops.hpp"

namespace dag {

/// Pre-norm Transformer block: x + Attn(LN(x)), then + FFN(LN(x)).
/// In a discovery network, `w_q`/`w_k` are the projections exported for
/// injection.
struct TrmBlockParams {
  LayerNormParams norm_attn;
  Tensor w_q, w_k, w_v;  // [d x d]
  LayerNormParams norm_ff;
  Mlp feedforward;  // d -> h_ff -> d, GELU
  std::size_t heads = 1;

  TrmBlockParams() = default;
  TrmBlockParams(std::size_t d_model, std::size_t ff_width, std::size_t head_count, std::mt19937_64& rng)
      : norm_attn(d_model),
        w_q(init_uniform({d_model, d_model}, d_model, rng)),
        w_k(init_uniform({d_model, d_model}, d_model, rng)),
        w_v(init_uniform({d_model, d_model}, d_model, rng)),
        norm_ff(d_model),
        feedforward(d_model, ff_width, d_model, Activation::Gelu, rng),
        heads(head_count) {
    if (head_count == 0 || d_model % head_count != 0) {
      throw ContractError("head count " + std::to_string(head_count) + " must divide d=" +
                          std::to_string(d_model));
    }
  }

  std::size_t width() const { return w_q.dim(0); }

  /// `primed` names the projections w_q_prime/w_k_prime/w_v_prime.
  void collect(const std::string& prefix, Parameters& out, bool primed) const {
    const std::string suffix = primed ? "_prime" : "";
    norm_attn.collect(prefix + ".norm_attn", out);
    out.push_back({prefix + ".w_q" + suffix, w_q});
    out.push_back({prefix + ".w_k" + suffix, w_k});
    out.push_back({prefix + ".w_v" + suffix, w_v});
    norm_ff.collect(prefix + ".norm_ff", out);
    feedforward.collect(prefix + ".feedforward", out);
  }
};

/// Own projections plus handles that alias a discovery block's W_q', W_k'.
struct CausalTrmBlockParams {
  TrmBlockParams own;
  Tensor injected_q;
  Tensor injected_k;

  CausalTrmBlockParams() = default;
  CausalTrmBlockParams(std::size_t d_model, std::size_t ff_width, std::size_t head_count,
                       const TrmBlockParams& source, std::mt19937_64& rng)
      : own(d_model, ff_width, head_count, rng), injected_q(source.w_q), injected_k(source.w_k) {
    if (source.width() != d_model) {
      throw DimensionError("injection source width " + std::to_string(source.width()) +
                           " vs block width " + std::to_string(d_model));
    }
  }

  /// Injected handles are owned by the discovery network and not listed here.
  void collect(const std::string& prefix, Parameters& out) const { own.collect(prefix, out, false); }
};

struct BlockOutput {
  Tensor out;    // [..., M, d]
  Tensor score;  // [..., M, M]; head average when heads > 1
};

struct CausalBlockOutput {
  Tensor out;
  Tensor fused;  // alpha * score_own + (1 - alpha) * score_injected
  Tensor score_own;
  Tensor score_injected;
};

namespace detail {

inline void check_tokens(const Tensor& tokens, std::size_t d) {
  if (tokens.rank() < 2 || tokens.shape().back() != d) {
    throw DimensionError("attention expects tokens [.., M x " + std::to_string(d) + "], got " +
                         shape_str(tokens.shape()));
  }
}

// Per-head softmax(Q K^T / sqrt(d_head)) from normalized tokens.
inline std::vector<Tensor> attention_scores(const Tensor& h, const Tensor& w_q, const Tensor& w_k,
                                            std::size_t heads) {
  const Tensor q = matmul(h, w_q);
  const Tensor k = matmul(h, w_k);
  const std::size_t d = w_q.dim(1);
  const std::size_t dh = d / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> scores;
  if (heads == 1) {
    scores.push_back(softmax_rows(scale(matmul(q, transpose(k)), inv)));
    return scores;
  }
  for (std::size_t i = 0; i < heads; ++i) {
    const Tensor qh = slice(q, -1, i * dh, dh);
    const Tensor kh = slice(k, -1, i * dh, dh);
    scores.push_back(softmax_rows(scale(matmul(qh, transpose(kh)), inv)));
  }
  return scores;
}

inline Tensor mix_values(const std::vector<Tensor>& mixers, const Tensor& v) {
  if (mixers.size() == 1) return matmul(mixers[0], v);
  const std::size_t dh = v.shape().back() / mixers.size();
  std::vector<Tensor> parts;
  for (std::size_t i = 0; i < mixers.size(); ++i) parts.push_back(matmul(mixers[i], slice(v, -1, i * dh, dh)));
  return concat(parts, -1);
}

inline Tensor head_average(const std::vector<Tensor>& scores) {
  Tensor acc = scores[0];
  for (std::size_t i = 1; i < scores.size(); ++i) acc = add(acc, scores[i]);
  return scores.size() == 1 ? acc : scale(acc, 1.0 / static_cast<double>(scores.size()));
}

inline Tensor finish_block(const Tensor& tokens, const Tensor& attended, const TrmBlockParams& p) {
  const Tensor x = add(tokens, attended);
  return add(x, p.feedforward(p.norm_ff(x)));
}

}  // namespace detail

/// Standard block. `resoftmax` applies a second row softmax to the score
/// before mixing values; it exists so a causal block run with
/// double_softmax has a plain counterpart to compare against.
inline BlockOutput trm_block(const Tensor& tokens, const TrmBlockParams& p, bool resoftmax = false) {
  detail::check_tokens(tokens, p.width());
  const Tensor h = p.norm_attn(tokens);
  auto scores = detail::attention_scores(h, p.w_q, p.w_k, p.heads);
  std::vector<Tensor> mixers = scores;
  if (resoftmax) {
    for (auto& s : mixers) s = softmax_rows(s);
  }
  const Tensor v = matmul(h, p.w_v);
  return {detail::finish_block(tokens, detail::mix_values(mixers, v), p), detail::head_average(scores)};
}

inline void check_alpha_range(const Tensor& alpha) {
  for (double a : alpha.values()) {
    if (!(a >= 0.0 && a <= 1.0)) {
      throw ContractError("alpha must lie in [0, 1], got " + std::to_string(a));
    }
  }
}

/// Causal block. `alpha` broadcasts against the [.., M, M] score (e.g. shape
/// [G, 1, 1] for one weight per sequence, or [1]).
inline CausalBlockOutput causal_trm_block(const Tensor& tokens, const CausalTrmBlockParams& p,
                                          const Tensor& alpha, bool double_softmax = true) {
  detail::check_tokens(tokens, p.own.width());
  check_alpha_range(alpha);
  const Tensor h = p.own.norm_attn(tokens);
  auto own = detail::attention_scores(h, p.own.w_q, p.own.w_k, p.own.heads);
  // A constant alpha of one ignores the injected scores, so they are computed
  // off the graph and the injected projections receive no gradient.
  const auto& av = alpha.values();
  const bool own_only = !alpha.requires_grad() && std::all_of(av.begin(), av.end(), [](double a) { return a == 1.0; });
  std::vector<Tensor> injected;
  if (own_only) {
    NoGradGuard guard;
    injected = detail::attention_scores(h, p.injected_q, p.injected_k, p.own.heads);
  } else {
    injected = detail::attention_scores(h, p.injected_q, p.injected_k, p.own.heads);
  }
  std::vector<Tensor> fused;
  if (own_only) {
    fused = own;
  } else {
    const Tensor keep = add_scalar(scale(alpha, -1.0), 1.0);
    for (std::size_t i = 0; i < own.size(); ++i) {
      fused.push_back(add(mul(alpha, own[i]), mul(keep, injected[i])));
    }
  }
  std::vector<Tensor> mixers = fused;
  if (double_softmax) {
    for (auto& s : mixers) s = softmax_rows(s);
  }
  const Tensor v = matmul(h, p.own.w_v);
  return {detail::finish_block(tokens, detail::mix_values(mixers, v), p.own), detail::head_average(fused),
          detail::head_average(own), detail::head_average(injected)};
}

inline CausalBlockOutput causal_trm_block(const Tensor& tokens, const CausalTrmBlockParams& p, double alpha,
                                          bool double_softmax = true) {
  return causal_trm_block(tokens, p, Tensor::scalar(alpha), double_softmax);
}

/// Two ReLU perceptrons whose outputs are combined by a dot product.
struct GateParams {
  Mlp mlp_a;
  Mlp mlp_b;

  GateParams() = default;
  GateParams(std::size_t in_a, std::size_t in_b, std::size_t hidden, std::mt19937_64& rng)
      : mlp_a(in_a, hidden, hidden, Activation::Relu, rng), mlp_b(in_b, hidden, hidden, Activation::Relu, rng) {}

  void collect(const std::string& prefix, Parameters& out) const {
    mlp_a.collect(prefix + ".mlp_a", out);
    mlp_b.collect(prefix + ".mlp_b", out);
  }
};

/// alpha = sigmoid(<mlp_a(cond_a), mlp_b(cond_b)>). Inputs are [.., in]; their
/// leading axes broadcast, and the result drops the feature axis. Rank-1
/// inputs give shape [1].
inline Tensor gate_alpha(const Tensor& cond_a, const Tensor& cond_b, const GateParams& p) {
  auto lift = [](const Tensor& x) { return x.rank() == 1 ? reshape(x, {1, x.numel()}) : x; };
  const Tensor a = lift(cond_a);
  const Tensor b = lift(cond_b);
  if (a.shape().back() != p.mlp_a.first.in_features() || b.shape().back() != p.mlp_b.first.in_features()) {
    throw DimensionError("gate expects widths " + std::to_string(p.mlp_a.first.in_features()) + " and " +
                         std::to_string(p.mlp_b.first.in_features()) + ", got " + shape_str(cond_a.shape()) +
                         " and " + shape_str(cond_b.shape()));
  }
  return sigmoid(sum_axis(mul(p.mlp_a(a), p.mlp_b(b)), -1));
}

}  // namespace dag
