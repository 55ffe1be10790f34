#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "dag/errors.hpp"
#include "dag/tensor.hpp"

namespace dag {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment buffers keyed by parameter name; created lazily on first update.
struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::unordered_map<std::string, std::vector<double>> m;
  std::unordered_map<std::string, std::vector<double>> v;

  AdamState() = default;
  explicit AdamState(AdamOptions opts) : options(opts) {}
};

/// One bias-corrected Adam update over `params`; grads are cleared afterward.
inline void adam_step(AdamState& state, Parameters& params) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) {
      throw ContractError("adam_step: parameter '" + p.name + "' has no gradient");
    }
  }
  state.step += 1;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (auto& p : params) {
    auto& m = state.m[p.name];
    auto& v = state.v[p.name];
    auto theta = p.tensor.mutable_values();
    auto g = p.tensor.grad();
    if (m.empty()) {
      m.assign(theta.size(), 0.0);
      v.assign(theta.size(), 0.0);
    }
    if (m.size() != theta.size()) {
      throw ContractError("adam_step: moment buffer size changed for '" + p.name + "'");
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      theta[i] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
    }
    p.tensor.clear_grad();
  }
}

inline void zero_grad(Parameters& params) {
  for (auto& p : params) p.tensor.clear_grad();
}

/// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) trainable leaf.
inline Tensor init_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(numel_of(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor::parameter(std::move(shape), std::move(values));
}

inline Tensor init_constant(Shape shape, double value) {
  auto n = numel_of(shape);
  return Tensor::parameter(std::move(shape), std::vector<double>(n, value));
}

}  // namespace dag
