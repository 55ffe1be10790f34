#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dag/errors.hpp"

namespace dag {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

namespace detail {
inline thread_local int no_grad_depth = 0;
}

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Dense row-major float64 array that can take part in a reverse-mode graph.
///
/// A Tensor is a cheap handle: copies share storage. Leaves created with
/// `Tensor::parameter` are trainable; results of ops record their inputs and a
/// backward closure whenever any input requires a gradient and recording is
/// enabled.
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty means "absent"
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into parents' grads.
    std::function<void(Node&)> backward_fn;

    std::vector<double>& ensure_grad() {
      if (grad.empty()) grad.assign(value.size(), 0.0);
      return grad;
    }
  };

  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values) {
    if (numel_of(shape) != values.size()) {
      throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                           std::to_string(numel_of(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    for (auto e : shape) {
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    node_ = std::make_shared<Node>();
    node_->shape = std::move(shape);
    node_->value = std::move(values);
  }

  static Tensor zeros(Shape shape) {
    auto n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Tensor full(Shape shape, double v) {
    auto n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  /// Trainable leaf.
  static Tensor parameter(Shape shape, std::vector<double> values) {
    Tensor t(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

  std::span<const double> values() const { return node_->value; }
  /// Direct write access; intended for initialization and optimizer updates.
  std::span<double> mutable_values() { return node_->value; }
  const std::vector<double>& vec() const { return node_->value; }

  double item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  double operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return !node_->backward_fn; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void clear_grad() {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
  }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  /// Value copy without graph history.
  Tensor detach() const { return Tensor(shape(), node_->value); }

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

  /// Builds an op result. `backward` is retained only when some parent
  /// requires a gradient and recording is enabled.
  static Tensor make_result(Shape shape, std::vector<double> values,
                            std::vector<Tensor> parents,
                            std::function<void(Node&)> backward) {
    Tensor out(std::move(shape), std::move(values));
    if (!grad_enabled()) return out;
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    if (!needs) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward_fn = std::move(backward);
    return out;
  }

 private:
  std::shared_ptr<Node> node_;
};

/// Named trainable tensor.
struct Parameter {
  std::string name;
  Tensor tensor;
};

using Parameters = std::vector<Parameter>;

/// Reverse-mode accumulation from a scalar loss. Gradients from multiple uses
/// of one tensor sum. Leaves keep their grads; interior grads are released.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) return;

  using Node = Tensor::Node;
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(&loss.node(), 0);
  visited.insert(&loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node().ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) {
      node->backward_fn(*node);
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

}  // namespace dag
