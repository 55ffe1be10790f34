#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "test_support.hpp"

namespace dag::testing {

/// One randomized finite-difference check of a primitive: draws shapes and
/// inputs from `rng`, then compares analytic and numeric gradients.
struct GradCase {
  std::string name;
  std::function<GradCheck(std::mt19937_64&)> run;
};

inline std::size_t draw_extent(std::mt19937_64& rng, std::size_t lo = 1, std::size_t hi = 4) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Values kept away from zero so kinks (relu, |x|) sit outside the stencil.
inline Tensor away_from_zero(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.1, 1.5);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return Tensor::parameter(shape, std::move(v));
}

inline std::vector<GradCase> primitive_grad_cases() {
  using R = std::mt19937_64;
  auto check1 = [](Tensor x, std::function<Tensor(const Tensor&)> f, R& rng) {
    return check_grads([=] { return weighted_sum(f(x)); }, {x}, rng);
  };
  auto check2 = [](Tensor a, Tensor b, std::function<Tensor(const Tensor&, const Tensor&)> f, R& rng) {
    return check_grads([=] { return weighted_sum(f(a, b)); }, {a, b}, rng);
  };
  auto shape3 = [](R& rng) { return Shape{draw_extent(rng), draw_extent(rng), draw_extent(rng, 2, 5)}; };

  std::vector<GradCase> cases;
  cases.push_back({"add", [=](R& rng) {
                     const Shape s = shape3(rng);
                     return check2(random_param(s, rng), random_param(s, rng), add, rng);
                   }});
  cases.push_back({"add_broadcast", [=](R& rng) {
                     const Shape s = shape3(rng);
                     return check2(random_param(s, rng), random_param({s.back()}, rng), add, rng);
                   }});
  cases.push_back({"sub", [=](R& rng) {
                     const Shape s = shape3(rng);
                     return check2(random_param(s, rng), random_param({s[1], s[2]}, rng), sub, rng);
                   }});
  cases.push_back({"mul", [=](R& rng) {
                     const Shape s = shape3(rng);
                     return check2(random_param(s, rng), random_param(s, rng), mul, rng);
                   }});
  cases.push_back({"mul_broadcast_leading", [=](R& rng) {
                     const Shape s = shape3(rng);
                     return check2(random_param(s, rng), random_param({s[0], 1, 1}, rng), mul, rng);
                   }});
  cases.push_back({"scale", [=](R& rng) {
                     return check1(random_param(shape3(rng), rng), [](const Tensor& x) { return scale(x, -1.7); }, rng);
                   }});
  cases.push_back({"add_scalar", [=](R& rng) {
                     return check1(random_param(shape3(rng), rng), [](const Tensor& x) { return add_scalar(x, 0.3); },
                                   rng);
                   }});
  cases.push_back({"relu", [=](R& rng) { return check1(away_from_zero(shape3(rng), rng), relu, rng); }});
  cases.push_back({"gelu", [=](R& rng) { return check1(random_param(shape3(rng), rng), gelu, rng); }});
  cases.push_back({"sigmoid", [=](R& rng) { return check1(random_param(shape3(rng), rng, 2.0), sigmoid, rng); }});
  cases.push_back({"reshape", [=](R& rng) {
                     const Shape s = shape3(rng);
                     return check1(random_param(s, rng),
                                   [s](const Tensor& x) { return reshape(x, {s[0] * s[1], s[2]}); }, rng);
                   }});
  cases.push_back({"transpose", [=](R& rng) { return check1(random_param(shape3(rng), rng), transpose, rng); }});
  cases.push_back({"matmul", [=](R& rng) {
                     const std::size_t m = draw_extent(rng), k = draw_extent(rng), n = draw_extent(rng);
                     return check2(random_param({m, k}, rng), random_param({k, n}, rng), matmul, rng);
                   }});
  cases.push_back({"matmul_batched", [=](R& rng) {
                     const std::size_t g = draw_extent(rng), m = draw_extent(rng), k = draw_extent(rng),
                                       n = draw_extent(rng);
                     return check2(random_param({g, m, k}, rng), random_param({g, k, n}, rng), matmul, rng);
                   }});
  cases.push_back({"matmul_shared_right", [=](R& rng) {
                     const std::size_t g = draw_extent(rng), m = draw_extent(rng), k = draw_extent(rng),
                                       n = draw_extent(rng);
                     return check2(random_param({g, m, k}, rng), random_param({k, n}, rng), matmul, rng);
                   }});
  cases.push_back({"matmul_shared_left", [=](R& rng) {
                     const std::size_t g = draw_extent(rng), m = draw_extent(rng), k = draw_extent(rng),
                                       n = draw_extent(rng);
                     return check2(random_param({m, k}, rng), random_param({g, k, n}, rng), matmul, rng);
                   }});
  cases.push_back({"sum", [=](R& rng) {
                     Tensor x = random_param(shape3(rng), rng);
                     return check_grads([=] { return scale(sum(x), 0.7); }, {x}, rng);
                   }});
  cases.push_back({"mean", [=](R& rng) {
                     Tensor x = random_param(shape3(rng), rng);
                     return check_grads([=] { return mean(mul(x, x)); }, {x}, rng);
                   }});
  cases.push_back({"sum_axis", [=](R& rng) {
                     const long axis = std::uniform_int_distribution<long>(-3, 2)(rng);
                     return check1(random_param(shape3(rng), rng), [axis](const Tensor& x) { return sum_axis(x, axis); },
                                   rng);
                   }});
  cases.push_back({"dot", [=](R& rng) {
                     const std::size_t n = draw_extent(rng, 1, 8);
                     Tensor a = random_param({n}, rng), b = random_param({n}, rng);
                     return check_grads([=] { return mul(dot(a, b), dot(a, b)); }, {a, b}, rng);
                   }});
  cases.push_back({"concat", [=](R& rng) {
                     const Shape s = shape3(rng);
                     const long axis = std::uniform_int_distribution<long>(0, 2)(rng);
                     Shape s2 = s;
                     s2[static_cast<std::size_t>(axis)] = draw_extent(rng);
                     return check2(random_param(s, rng), random_param(s2, rng),
                                   [axis](const Tensor& a, const Tensor& b) { return concat({a, b}, axis); }, rng);
                   }});
  cases.push_back({"slice", [=](R& rng) {
                     const Shape s = shape3(rng);
                     const std::size_t len = draw_extent(rng, 1, s[2]);
                     const std::size_t start = std::uniform_int_distribution<std::size_t>(0, s[2] - len)(rng);
                     return check1(random_param(s, rng),
                                   [=](const Tensor& x) { return slice(x, -1, start, len); }, rng);
                   }});
  cases.push_back({"unfold", [=](R& rng) {
                     const std::size_t t = draw_extent(rng, 4, 12);
                     const std::size_t size = draw_extent(rng, 1, t);
                     const std::size_t step = draw_extent(rng, 1, 4);
                     return check1(random_param({draw_extent(rng), t}, rng),
                                   [=](const Tensor& x) { return unfold(x, size, step); }, rng);
                   }});
  cases.push_back({"softmax_rows", [=](R& rng) {
                     return check1(random_param(shape3(rng), rng, 2.0), softmax_rows, rng);
                   }});
  cases.push_back({"layer_norm", [=](R& rng) {
                     const Shape s = shape3(rng);
                     Tensor x = random_param(s, rng), g = random_param({s[2]}, rng), b = random_param({s[2]}, rng);
                     return check_grads([=] { return weighted_sum(layer_norm(x, g, b)); }, {x, g, b}, rng);
                   }});
  cases.push_back({"l1_loss", [=](R& rng) {
                     const Shape s = shape3(rng);
                     Tensor p = away_from_zero(s, rng);
                     Tensor t = Tensor::parameter(s, std::vector<double>(numel_of(s), 0.0));
                     return check_grads([=] { return l1_loss(p, t); }, {p, t}, rng);
                   }});
  return cases;
}

}  // namespace dag::testing
