#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "test_support.hpp"

namespace dag::testing {

/// Largest |row sum - 1| over the last axis.
inline double row_stochastic_error(const Tensor& s) {
  const std::size_t n = s.shape().back();
  double worst = 0.0;
  for (std::size_t r = 0; r < s.numel() / n; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = s[r * n + j];
      if (v < 0.0) return 1.0;
      acc += v;
    }
    worst = std::max(worst, std::abs(acc - 1.0));
  }
  return worst;
}

struct AttentionInstance {
  TrmBlockParams source;
  CausalTrmBlockParams causal;
  Tensor tokens;
  double alpha = 0.5;
};

/// Random block sizes, tokens and alpha. Heads divide d.
inline AttentionInstance random_attention_instance(std::mt19937_64& rng) {
  const std::size_t heads = std::uniform_int_distribution<std::size_t>(1, 2)(rng);
  const std::size_t d = heads * std::uniform_int_distribution<std::size_t>(1, 4)(rng);
  const std::size_t m = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
  const std::size_t g = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
  AttentionInstance inst;
  inst.source = TrmBlockParams(d, 2 * d, heads, rng);
  inst.causal = CausalTrmBlockParams(d, 2 * d, heads, inst.source, rng);
  inst.tokens = random_tensor({g, m, d}, rng, 2.0);
  inst.alpha = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return inst;
}

/// A plain block holding the injected projections and the causal block's
/// own value, norm and feed-forward weights.
inline TrmBlockParams injected_view(const CausalTrmBlockParams& p) {
  TrmBlockParams q = p.own;
  q.w_q = p.injected_q;
  q.w_k = p.injected_k;
  return q;
}

}  // namespace dag::testing
