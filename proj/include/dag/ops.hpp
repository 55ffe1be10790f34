#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dag/errors.hpp"
#include "dag/tensor.hpp"

// Differentiable primitives. Every op here is covered by the finite-difference
// property suite in tests/test_autograd.cpp.

namespace dag {

namespace detail {

using Node = Tensor::Node;

inline Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

inline double* grad_of(Node& n) {
  return n.requires_grad ? n.ensure_grad().data() : nullptr;
}

// Right-aligned broadcast of `in` to `out`: for each output element the flat
// index of the input element it reads.
inline std::vector<std::size_t> broadcast_index(const Shape& out, const Shape& in) {
  const std::size_t r = out.size();
  std::vector<std::size_t> in_stride(r, 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    std::size_t ax = in.size() - 1 - k;
    std::size_t oax = r - 1 - k;
    in_stride[oax] = in[ax] == 1 ? 0 : stride;
    stride *= in[ax];
  }
  std::vector<std::size_t> idx(numel_of(out));
  std::vector<std::size_t> counter(r, 0);
  std::size_t cur = 0;
  for (std::size_t flat = 0; flat < idx.size(); ++flat) {
    idx[flat] = cur;
    for (std::size_t ax = r; ax-- > 0;) {
      ++counter[ax];
      cur += in_stride[ax];
      if (counter[ax] < out[ax]) break;
      cur -= in_stride[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  return idx;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t k = 0; k < r; ++k) {
    std::size_t ea = k < a.size() ? a[a.size() - 1 - k] : 1;
    std::size_t eb = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) +
                           " with " + shape_str(b));
    }
    out[r - 1 - k] = std::max(ea, eb);
  }
  return out;
}

enum class BinaryKind { Add, Sub, Mul };

inline Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
  if (a.shape() == b.shape()) {
    const auto& av = a.vec();
    const auto& bv = b.vec();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      switch (kind) {
        case BinaryKind::Add: out[i] = av[i] + bv[i]; break;
        case BinaryKind::Sub: out[i] = av[i] - bv[i]; break;
        case BinaryKind::Mul: out[i] = av[i] * bv[i]; break;
      }
    }
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [kind](Node& self) {
      Node& pa = parent(self, 0);
      Node& pb = parent(self, 1);
      const auto& g = self.grad;
      if (double* ga = grad_of(pa)) {
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += kind == BinaryKind::Mul ? g[i] * pb.value[i] : g[i];
      }
      if (double* gb = grad_of(pb)) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          switch (kind) {
            case BinaryKind::Add: gb[i] += g[i]; break;
            case BinaryKind::Sub: gb[i] -= g[i]; break;
            case BinaryKind::Mul: gb[i] += g[i] * pa.value[i]; break;
          }
        }
      }
    });
  }

  Shape shape = broadcast_shape(a.shape(), b.shape(), name);
  const std::size_t nb = b.numel();
  if (shape == a.shape() && a.numel() % nb == 0 &&
      std::equal(b.shape().rbegin(), b.shape().rend(), a.shape().rbegin())) {
    // b repeats along a's leading axes (bias, positional table).
    const auto& av = a.vec();
    const auto& bv = b.vec();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double x = av[i], y = bv[i % nb];
      out[i] = kind == BinaryKind::Add ? x + y : kind == BinaryKind::Sub ? x - y : x * y;
    }
    return Tensor::make_result(std::move(shape), std::move(out), {a, b}, [kind, nb](Node& self) {
      Node& pa = parent(self, 0);
      Node& pb = parent(self, 1);
      const auto& g = self.grad;
      if (double* ga = grad_of(pa)) {
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += kind == BinaryKind::Mul ? g[i] * pb.value[i % nb] : g[i];
      }
      if (double* gb = grad_of(pb)) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          switch (kind) {
            case BinaryKind::Add: gb[i % nb] += g[i]; break;
            case BinaryKind::Sub: gb[i % nb] -= g[i]; break;
            case BinaryKind::Mul: gb[i % nb] += g[i] * pa.value[i]; break;
          }
        }
      }
    });
  }
  auto ia = broadcast_index(shape, a.shape());
  auto ib = broadcast_index(shape, b.shape());
  const auto& av = a.vec();
  const auto& bv = b.vec();
  std::vector<double> out(ia.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = av[ia[i]], y = bv[ib[i]];
    out[i] = kind == BinaryKind::Add ? x + y : kind == BinaryKind::Sub ? x - y : x * y;
  }
  return Tensor::make_result(
      std::move(shape), std::move(out), {a, b},
      [kind, ia = std::move(ia), ib = std::move(ib)](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        const auto& g = self.grad;
        if (double* ga = grad_of(pa)) {
          for (std::size_t i = 0; i < g.size(); ++i)
            ga[ia[i]] += kind == BinaryKind::Mul ? g[i] * pb.value[ib[i]] : g[i];
        }
        if (double* gb = grad_of(pb)) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            switch (kind) {
              case BinaryKind::Add: gb[ib[i]] += g[i]; break;
              case BinaryKind::Sub: gb[ib[i]] -= g[i]; break;
              case BinaryKind::Mul: gb[ib[i]] += g[i] * pa.value[ia[i]]; break;
            }
          }
        }
      });
}

template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df) {
  const auto& xv = x.vec();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return Tensor::make_result(x.shape(), std::move(out), {x}, [df](Node& self) {
    Node& px = parent(self, 0);
    double* gx = grad_of(px);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      gx[i] += self.grad[i] * df(px.value[i], self.value[i]);
  });
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t m,
                     std::size_t k, std::size_t n) {
  MutMap(c, m, n).noalias() += ConstMap(a, m, k) * ConstMap(b, k, n);
}

// dA[m x k] += dC[m x n] * B^T
inline void gemm_acc_nt(const double* dc, const double* b, double* da, std::size_t m,
                        std::size_t k, std::size_t n) {
  MutMap(da, m, k).noalias() += ConstMap(dc, m, n) * ConstMap(b, k, n).transpose();
}

// dB[k x n] += A^T * dC[m x n]
inline void gemm_acc_tn(const double* a, const double* dc, double* db, std::size_t m,
                        std::size_t k, std::size_t n) {
  MutMap(db, k, n).noalias() += ConstMap(a, m, k).transpose() * ConstMap(dc, m, n);
}

inline std::size_t normalize_axis(long axis, std::size_t rank) {
  long r = static_cast<long>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("axis out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(axis);
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, detail::BinaryKind::Add, "add");
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, detail::BinaryKind::Sub, "sub");
}
/// Elementwise (Hadamard) product with broadcasting.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, detail::BinaryKind::Mul, "mul");
}

inline Tensor scale(const Tensor& x, double s) {
  return detail::unary(x, [s](double v) { return v * s; },
                       [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary(x, [c](double v) { return v + c; },
                       [](double, double) { return 1.0; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

/// Exact (erf-based) GELU.
inline Tensor gelu(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return Tensor::make_result(std::move(shape), x.vec(), {x}, [](detail::Node& self) {
    double* gx = detail::grad_of(detail::parent(self, 0));
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

inline Tensor flatten(const Tensor& x) { return reshape(x, {x.numel()}); }

/// Swaps the last two axes.
inline Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_str(x.shape()));
  const std::size_t r = x.rank();
  const std::size_t m = x.dim(r - 2), n = x.dim(r - 1);
  const std::size_t batch = x.numel() / (m * n);
  Shape shape = x.shape();
  std::swap(shape[r - 2], shape[r - 1]);
  const auto& xv = x.vec();
  std::vector<double> out(xv.size());
  for (std::size_t b = 0; b < batch; ++b) {
    const double* src = xv.data() + b * m * n;
    double* dst = out.data() + b * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  }
  return Tensor::make_result(std::move(shape), std::move(out), {x},
                             [batch, m, n](detail::Node& self) {
                               double* gx = detail::grad_of(detail::parent(self, 0));
                               if (!gx) return;
                               for (std::size_t b = 0; b < batch; ++b) {
                                 const double* g = self.grad.data() + b * m * n;
                                 double* dst = gx + b * m * n;
                                 for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < n; ++j) dst[i * n + j] += g[j * m + i];
                               }
                             });
}

/// Matrix product over the last two axes. Either operand may be rank 2 and is
/// then shared across the other operand's leading (batch) axes; otherwise the
/// leading axes must agree.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  const bool a_shared = a.rank() == 2 && b.rank() > 2;
  const bool b_shared = b.rank() == 2;
  bool lead_ok = k == kb;
  if (lead_ok && !a_shared && !b_shared) {
    lead_ok = a.rank() == b.rank() &&
              std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin());
  }
  if (!lead_ok) {
    throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }

  Shape shape = a_shared ? b.shape() : a.shape();
  shape[shape.size() - 2] = m;
  shape[shape.size() - 1] = n;
  std::vector<double> out(numel_of(shape), 0.0);
  const auto& av = a.vec();
  const auto& bv = b.vec();

  if (b_shared) {
    // (batch*m) x k times k x n as one product.
    const std::size_t rows = a.numel() / k;
    detail::gemm_acc(av.data(), bv.data(), out.data(), rows, k, n);
    return Tensor::make_result(std::move(shape), std::move(out), {a, b},
                               [rows, k, n](detail::Node& self) {
                                 auto& pa = detail::parent(self, 0);
                                 auto& pb = detail::parent(self, 1);
                                 if (double* ga = detail::grad_of(pa))
                                   detail::gemm_acc_nt(self.grad.data(), pb.value.data(), ga, rows, k, n);
                                 if (double* gb = detail::grad_of(pb))
                                   detail::gemm_acc_tn(pa.value.data(), self.grad.data(), gb, rows, k, n);
                               });
  }

  const std::size_t batch = numel_of(shape) / (m * n);
  const std::size_t a_step = a_shared ? 0 : m * k;
  const std::size_t b_step = k * n;
  for (std::size_t g = 0; g < batch; ++g) {
    detail::gemm_acc(av.data() + g * a_step, bv.data() + g * b_step, out.data() + g * m * n, m, k, n);
  }
  return Tensor::make_result(
      std::move(shape), std::move(out), {a, b},
      [batch, m, k, n, a_step, b_step](detail::Node& self) {
        auto& pa = detail::parent(self, 0);
        auto& pb = detail::parent(self, 1);
        double* ga = detail::grad_of(pa);
        double* gb = detail::grad_of(pb);
        for (std::size_t g = 0; g < batch; ++g) {
          const double* dc = self.grad.data() + g * m * n;
          if (ga) detail::gemm_acc_nt(dc, pb.value.data() + g * b_step, ga + g * a_step, m, k, n);
          if (gb) detail::gemm_acc_tn(pa.value.data() + g * a_step, dc, gb + g * b_step, m, k, n);
        }
      });
}

/// Sum of all elements, shape [1].
inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.vec()) s += v;
  return Tensor::make_result({1}, {s}, {x}, [](detail::Node& self) {
    double* gx = detail::grad_of(detail::parent(self, 0));
    if (!gx) return;
    const double g = self.grad[0];
    const std::size_t n = detail::parent(self, 0).value.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g;
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

/// Reduces one axis by summation (the axis is removed; rank-1 input gives [1]).
inline Tensor sum_axis(const Tensor& x, long axis_in) {
  const std::size_t axis = detail::normalize_axis(axis_in, x.rank());
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) shape.push_back(s[i]);
  if (shape.empty()) shape = {1};
  std::vector<double> out(outer * inner, 0.0);
  const auto& xv = x.vec();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * len + l) * inner + i];
  return Tensor::make_result(std::move(shape), std::move(out), {x},
                             [outer, inner, len](detail::Node& self) {
                               double* gx = detail::grad_of(detail::parent(self, 0));
                               if (!gx) return;
                               for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t l = 0; l < len; ++l)
                                   for (std::size_t i = 0; i < inner; ++i)
                                     gx[(o * len + l) * inner + i] += self.grad[o * inner + i];
                             });
}

/// Inner product of two equal-length vectors, shape [1].
inline Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || a.shape() != b.shape()) {
    throw DimensionError("dot expects equal-length vectors, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  return sum(mul(a, b));
}

inline Tensor concat(const std::vector<Tensor>& parts, long axis_in) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const std::size_t axis = detail::normalize_axis(axis_in, parts[0].rank());
  Shape shape = parts[0].shape();
  std::vector<std::size_t> lens;
  shape[axis] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == parts[0].rank();
    for (std::size_t i = 0; ok && i < p.rank(); ++i)
      ok = i == axis || p.dim(i) == parts[0].dim(i);
    if (!ok) throw DimensionError("concat mismatch: " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    lens.push_back(p.dim(axis));
    shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t total = shape[axis];
  std::vector<double> out(numel_of(shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p].vec();
    const std::size_t chunk = lens[p] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.data() + o * chunk, chunk, out.data() + (o * total + offset) * inner);
    offset += lens[p];
  }
  return Tensor::make_result(std::move(shape), std::move(out), parts,
                             [outer, inner, total, lens](detail::Node& self) {
                               std::size_t offset = 0;
                               for (std::size_t p = 0; p < lens.size(); ++p) {
                                 const std::size_t chunk = lens[p] * inner;
                                 if (double* g = detail::grad_of(detail::parent(self, p))) {
                                   for (std::size_t o = 0; o < outer; ++o) {
                                     const double* src = self.grad.data() + (o * total + offset) * inner;
                                     for (std::size_t i = 0; i < chunk; ++i) g[o * chunk + i] += src[i];
                                   }
                                 }
                                 offset += lens[p];
                               }
                             });
}

/// Contiguous sub-range [start, start+len) along one axis.
inline Tensor slice(const Tensor& x, long axis_in, std::size_t start, std::size_t len) {
  const std::size_t axis = detail::normalize_axis(axis_in, x.rank());
  if (len == 0 || start + len > x.dim(axis)) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") out of range for " + shape_str(x.shape()));
  }
  Shape shape = x.shape();
  const std::size_t full = shape[axis];
  shape[axis] = len;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  std::vector<double> out(numel_of(shape));
  const auto& xv = x.vec();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.data() + (o * full + start) * inner, len * inner, out.data() + o * len * inner);
  return Tensor::make_result(std::move(shape), std::move(out), {x},
                             [outer, inner, full, start, len](detail::Node& self) {
                               double* gx = detail::grad_of(detail::parent(self, 0));
                               if (!gx) return;
                               for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t i = 0; i < len * inner; ++i)
                                   gx[(o * full + start) * inner + i] += self.grad[o * len * inner + i];
                             });
}

/// Sliding windows over the last axis: [..., T] -> [..., M, size] with
/// M = floor((T - size) / step) + 1. Trailing steps that do not fill a
/// window are dropped.
inline Tensor unfold(const Tensor& x, std::size_t size, std::size_t step) {
  const std::size_t len = x.shape().back();
  if (size == 0 || step == 0 || size > len) {
    throw GeometryError("unfold: window " + std::to_string(size) + " / step " +
                        std::to_string(step) + " invalid for length " + std::to_string(len));
  }
  const std::size_t count = (len - size) / step + 1;
  const std::size_t outer = x.numel() / len;
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  shape.push_back(count);
  shape.push_back(size);
  std::vector<double> out(outer * count * size);
  const auto& xv = x.vec();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t w = 0; w < count; ++w)
      std::copy_n(xv.data() + o * len + w * step, size, out.data() + (o * count + w) * size);
  return Tensor::make_result(std::move(shape), std::move(out), {x},
                             [outer, count, size, step, len](detail::Node& self) {
                               double* gx = detail::grad_of(detail::parent(self, 0));
                               if (!gx) return;
                               for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t w = 0; w < count; ++w)
                                   for (std::size_t i = 0; i < size; ++i)
                                     gx[o * len + w * step + i] += self.grad[(o * count + w) * size + i];
                             });
}

/// Softmax over the last axis with row-max subtraction.
inline Tensor softmax_rows(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  const auto& xv = x.vec();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double* o = out.data() + r * n;
    double mx = in[0];
    for (std::size_t j = 0; j < n; ++j) {
      if (std::isnan(in[j])) throw NumericError("softmax_rows: NaN input in row " + std::to_string(r));
      mx = std::max(mx, in[j]);
    }
    if (!std::isfinite(mx)) throw NumericError("softmax_rows: non-finite input in row " + std::to_string(r));
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      s += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= s;
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [rows, n](detail::Node& self) {
    double* gx = detail::grad_of(detail::parent(self, 0));
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (g[j] - s);
    }
  });
}

/// Layer normalization over the last axis with learned scale and shift.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  const std::size_t n = x.shape().back();
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n}) {
    throw DimensionError("layer_norm: width " + std::to_string(n) + " vs gain " +
                         shape_str(gain.shape()) + ", bias " + shape_str(bias.shape()));
  }
  const std::size_t rows = x.numel() / n;
  const auto& xv = x.vec();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += in[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (in[j] - mu) * inv_std[r];
      out[r * n + j] = xhat[r * n + j] * gain[j] + bias[j];
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [rows, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        auto& px = detail::parent(self, 0);
        auto& pg = detail::parent(self, 1);
        double* gx = detail::grad_of(px);
        double* gg = detail::grad_of(pg);
        double* gb = detail::grad_of(detail::parent(self, 2));
        std::vector<double> dxhat(n);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* g = self.grad.data() + r * n;
          const double* xh = xhat.data() + r * n;
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            if (gg) gg[j] += g[j] * xh[j];
            if (gb) gb[j] += g[j];
            dxhat[j] = g[j] * pg.value[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xh[j];
          }
          if (!gx) continue;
          mean_d /= static_cast<double>(n);
          mean_dx /= static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j)
            gx[r * n + j] += inv_std[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
      });
}

/// Mean absolute error over all elements. Subgradient at exact ties is 0.
inline Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("l1_loss shape mismatch: " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
  }
  const auto& p = pred.vec();
  const auto& t = target.vec();
  const double inv_n = 1.0 / static_cast<double>(p.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - t[i]);
  return Tensor::make_result({1}, {s * inv_n}, {pred, target}, [inv_n](detail::Node& self) {
    auto& pp = detail::parent(self, 0);
    auto& pt = detail::parent(self, 1);
    double* gp = detail::grad_of(pp);
    double* gt = detail::grad_of(pt);
    const double g = self.grad[0] * inv_n;
    for (std::size_t i = 0; i < pp.value.size(); ++i) {
      const double d = pp.value[i] - pt.value[i];
      const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      if (gp) gp[i] += g * sgn;
      if (gt) gt[i] -= g * sgn;
    }
  });
}

}  // namespace dag
