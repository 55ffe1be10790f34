#pragma once

#include <random>
#include <string>

#include "dag/ops.hpp"
#include "dag/optim.hpp"

namespace dag {

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng)
      : weight(init_uniform({in, out}, in, rng)), bias(init_uniform({out}, in, rng)) {}

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  /// x: [..., in] with rank >= 2.
  Tensor operator()(const Tensor& x) const {
    if (x.shape().back() != in_features()) {
      throw DimensionError("linear expects width " + std::to_string(in_features()) + ", got " +
                           shape_str(x.shape()));
    }
    return add(matmul(x, weight), bias);
  }

  void collect(const std::string& prefix, Parameters& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

enum class Activation { Relu, Gelu };

inline Tensor activate(const Tensor& x, Activation act) {
  return act == Activation::Relu ? relu(x) : gelu(x);
}

/// Linear -> activation -> Linear.
struct Mlp {
  Linear first;
  Linear second;
  Activation act = Activation::Gelu;

  Mlp() = default;
  Mlp(std::size_t in, std::size_t hidden, std::size_t out, Activation a, std::mt19937_64& rng)
      : first(in, hidden, rng), second(hidden, out, rng), act(a) {}

  Tensor operator()(const Tensor& x) const { return second(activate(first(x), act)); }

  void collect(const std::string& prefix, Parameters& out) const {
    first.collect(prefix + ".fc1", out);
    second.collect(prefix + ".fc2", out);
  }
};

struct LayerNormParams {
  Tensor gain;
  Tensor shift;

  LayerNormParams() = default;
  explicit LayerNormParams(std::size_t width)
      : gain(init_constant({width}, 1.0)), shift(init_constant({width}, 0.0)) {}

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, shift); }

  void collect(const std::string& prefix, Parameters& out) const {
    out.push_back({prefix + ".gain", gain});
    out.push_back({prefix + ".shift", shift});
  }
};

}  // namespace dag
