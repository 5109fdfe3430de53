/* Copyright 2026 The CAMEx Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Differentiable primitives. Everything else in the library is composed from
// this set. Each primitive computes its value eagerly and, when tracking,
// records a closure that pushes the upstream gradient into its operands.

#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "camex/errors.hpp"
#include "camex/tensor/tensor.hpp"

namespace camex {

namespace detail {

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

inline void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(a.shape()));
  }
}

template <class F, class G>
Tensor unary(const char* op, const Tensor& x, F value_fn, G deriv_fn) {
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = value_fn(xv[i]);
  return make_result(op, x.shape(), out, {x}, [x, deriv_fn](std::span<const double> g) {
    auto gx = grad_of(x);
    auto xv = x.values();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * deriv_fn(xv[i]);
  });
}

// Strides for reducing over one axis: [outer, axis, inner].
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return detail::make_result("add", a.shape(), out, {a, b}, [a, b](std::span<const double> g) {
    for (auto t : {a, b}) {
      auto gt = detail::grad_of(t);
      for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += g[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return detail::make_result("sub", a.shape(), out, {a, b}, [a, b](std::span<const double> g) {
    auto ga = detail::grad_of(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    auto gb = detail::grad_of(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return detail::make_result("mul", a.shape(), out, {a, b}, [a, b](std::span<const double> g) {
    auto av = a.values(), bv = b.values();
    auto ga = detail::grad_of(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    auto gb = detail::grad_of(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
  });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary("add_scalar", x, [c](double v) { return v + c; },
                       [](double) { return 1.0; });
}

inline Tensor mul_scalar(const Tensor& x, double c) {
  return detail::unary("mul_scalar", x, [c](double v) { return v * c; },
                       [c](double) { return c; });
}

inline Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& x, double c) { return mul_scalar(x, c); }
inline Tensor operator*(double c, const Tensor& x) { return mul_scalar(x, c); }
inline Tensor operator+(const Tensor& x, double c) { return add_scalar(x, c); }
inline Tensor operator-(const Tensor& x) { return neg(x); }

inline Tensor exp(const Tensor& x) {
  return detail::unary("exp", x, [](double v) { return std::exp(v); },
                       [](double v) { return std::exp(v); });
}

inline Tensor log(const Tensor& x) {
  return detail::unary("log", x, [](double v) { return std::log(v); },
                       [](double v) { return 1.0 / v; });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary("tanh", x, [](double v) { return std::tanh(v); },
                       [](double v) {
                         const double t = std::tanh(v);
                         return 1.0 - t * t;
                       });
}

inline double sign_of(double v) { return (v > 0.0) - (v < 0.0); }

inline Tensor abs(const Tensor& x) {
  return detail::unary("abs", x, [](double v) { return std::abs(v); },
                       [](double v) { return sign_of(v); });
}

/// Elementwise sign in {-1, 0, 1}. Not differentiable: the result carries no
/// history.
inline Tensor sign(const Tensor& x) {
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sign_of(xv[i]);
  return Tensor(x.shape(), std::move(out));
}

/// Value-identical tensor that blocks every upstream gradient.
inline Tensor detach(const Tensor& x) {
  Tensor out(x.shape(), std::vector<double>(x.values().begin(), x.values().end()));
  return out;
}

// ---------------------------------------------------------------- broadcasting

/// x[..., n] + v[n] along the trailing axis.
inline Tensor add_bias(const Tensor& x, const Tensor& v) {
  detail::require_rank("add_bias", v, 1);
  if (x.rank() == 0 || x.shape().back() != v.dim(0)) {
    throw DimensionError("add_bias: shape " + shape_str(x.shape()) + " vs " +
                         shape_str(v.shape()));
  }
  const std::size_t n = v.dim(0);
  std::vector<double> out(x.numel());
  auto xv = x.values(), vv = v.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + vv[i % n];
  return detail::make_result("add_bias", x.shape(), out, {x, v}, [x, v, n](std::span<const double> g) {
    auto gx = detail::grad_of(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    auto gv = detail::grad_of(v);
    if (!gv.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) gv[i % n] += g[i];
    }
  });
}

/// out[r, c] = x[r, c] * w[r].
inline Tensor scale_rows(const Tensor& x, const Tensor& w) {
  detail::require_rank("scale_rows", x, 2);
  detail::require_rank("scale_rows", w, 1);
  if (x.dim(0) != w.dim(0)) {
    throw DimensionError("scale_rows: shape " + shape_str(x.shape()) + " vs " +
                         shape_str(w.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(x.numel());
  auto xv = x.values(), wv = w.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] * wv[r];
  return detail::make_result("scale_rows", x.shape(), out, {x, w},
                             [x, w, rows, cols](std::span<const double> g) {
    auto xv = x.values(), wv = w.values();
    auto gx = detail::grad_of(x);
    if (!gx.empty()) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r * cols + c] * wv[r];
    }
    auto gw = detail::grad_of(w);
    if (!gw.empty()) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gw[r] += g[r * cols + c] * xv[r * cols + c];
    }
  });
}

// ---------------------------------------------------------------- linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: shape " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  return detail::make_result("matmul", {m, n}, out, {a, b}, [a, b, m, k, n](std::span<const double> g) {
    auto av = a.values(), bv = b.values();
    auto ga = detail::grad_of(a);
    if (!ga.empty()) {  // g . b^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    auto gb = detail::grad_of(b);
    if (!gb.empty()) {  // a^T . g
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

inline Tensor transpose(const Tensor& x) {
  detail::require_rank("transpose", x, 2);
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  return detail::make_result("transpose", {c, r}, out, {x}, [x, r, c](std::span<const double> g) {
    auto gx = detail::grad_of(x);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
  });
}

/// View with a new shape over the same storage.
inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: shape " + shape_str(x.shape()) + " vs " +
                         shape_str(shape));
  }
  return detail::attach(Tensor::over_storage(std::move(shape), x.node_ptr()->storage),
                        "reshape", {x}, [x](std::span<const double> g) {
    auto gx = detail::grad_of(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
  });
}

inline Tensor flatten(const Tensor& x) { return reshape(x, {x.numel()}); }

/// Applies `m` along one axis: out[.., i, ..] = sum_j m[i, j] x[.., j, ..].
inline Tensor contract_axis(const Tensor& m, const Tensor& x, std::size_t axis) {
  detail::require_rank("contract_axis", m, 2);
  const auto s = detail::split_axis(x.shape(), axis);
  if (m.dim(1) != s.extent) {
    throw DimensionError("contract_axis: shape " + shape_str(m.shape()) + " vs " +
                         shape_str(x.shape()) + " on axis " + std::to_string(axis));
  }
  const std::size_t rows = m.dim(0);
  Shape out_shape = x.shape();
  out_shape[axis] = rows;
  std::vector<double> out(s.outer * rows * s.inner, 0.0);
  auto mv = m.values(), xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < s.extent; ++j) {
        const double mij = mv[i * s.extent + j];
        const double* src = &xv[(o * s.extent + j) * s.inner];
        double* dst = &out[(o * rows + i) * s.inner];
        for (std::size_t q = 0; q < s.inner; ++q) dst[q] += mij * src[q];
      }
  return detail::make_result("contract_axis", out_shape, out, {m, x},
                             [m, x, s, rows](std::span<const double> g) {
    auto mv = m.values(), xv = x.values();
    auto gm = detail::grad_of(m);
    auto gx = detail::grad_of(x);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < s.extent; ++j) {
          const double* gsrc = &g[(o * rows + i) * s.inner];
          const std::size_t xoff = (o * s.extent + j) * s.inner;
          if (!gm.empty()) {
            double acc = 0.0;
            for (std::size_t q = 0; q < s.inner; ++q) acc += gsrc[q] * xv[xoff + q];
            gm[i * s.extent + j] += acc;
          }
          if (!gx.empty()) {
            const double mij = mv[i * s.extent + j];
            for (std::size_t q = 0; q < s.inner; ++q) gx[xoff + q] += mij * gsrc[q];
          }
        }
  });
}

// ---------------------------------------------------------------- reductions

inline Tensor sum(const Tensor& x) {
  auto xv = x.values();
  double total = 0.0;
  for (double v : xv) total += v;
  return detail::make_result("sum", {}, {total}, {x}, [x](std::span<const double> g) {
    auto gx = detail::grad_of(x);
    for (double& v : gx) v += g[0];
  });
}

inline Tensor sum(const Tensor& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(s.outer * s.inner, 0.0);
  auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.extent; ++j)
      for (std::size_t q = 0; q < s.inner; ++q)
        out[o * s.inner + q] += xv[(o * s.extent + j) * s.inner + q];
  return detail::make_result("sum_axis", out_shape, out, {x}, [x, s](std::span<const double> g) {
    auto gx = detail::grad_of(x);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < s.extent; ++j)
        for (std::size_t q = 0; q < s.inner; ++q)
          gx[(o * s.extent + j) * s.inner + q] += g[o * s.inner + q];
  });
}

inline Tensor mean(const Tensor& x) {
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel()));
}

inline Tensor mean(const Tensor& x, std::size_t axis) {
  return mul_scalar(sum(x, axis), 1.0 / static_cast<double>(x.dim(axis)));
}

// ---------------------------------------------------------------- softmax

namespace detail {

inline void require_finite(const char* op, const Tensor& x) {
  for (double v : x.values()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

}  // namespace detail

/// Max-subtracted softmax along `axis`.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  detail::require_finite("softmax", x);
  const auto s = detail::split_axis(x.shape(), axis);
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t q = 0; q < s.inner; ++q) {
      auto idx = [&](std::size_t j) { return (o * s.extent + j) * s.inner + q; };
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.extent; ++j) mx = std::max(mx, xv[idx(j)]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.extent; ++j) z += (out[idx(j)] = std::exp(xv[idx(j)] - mx));
      for (std::size_t j = 0; j < s.extent; ++j) out[idx(j)] /= z;
    }
  auto y = std::make_shared<std::vector<double>>(out);
  return detail::make_result("softmax", x.shape(), std::move(out), {x}, [x, s, y](std::span<const double> g) {
    auto gx = detail::grad_of(x);
    const auto& yv = *y;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t q = 0; q < s.inner; ++q) {
        auto idx = [&](std::size_t j) { return (o * s.extent + j) * s.inner + q; };
        double dot = 0.0;
        for (std::size_t j = 0; j < s.extent; ++j) dot += g[idx(j)] * yv[idx(j)];
        for (std::size_t j = 0; j < s.extent; ++j) gx[idx(j)] += yv[idx(j)] * (g[idx(j)] - dot);
      }
  });
}

inline Tensor softmax(const Tensor& x) { return softmax(x, x.rank() - 1); }

/// log(softmax(x)) along the trailing axis, evaluated without forming softmax.
inline Tensor log_softmax(const Tensor& x) {
  detail::require_finite("log_softmax", x);
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xv[r * n + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(xv[r * n + j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xv[r * n + j] - lz;
  }
  auto y = std::make_shared<std::vector<double>>(out);
  return detail::make_result("log_softmax", x.shape(), std::move(out), {x},
                             [x, y, n, rows](std::span<const double> g) {
    auto gx = detail::grad_of(x);
    const auto& yv = *y;
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += g[r * n + j];
      for (std::size_t j = 0; j < n; ++j)
        gx[r * n + j] += g[r * n + j] - std::exp(yv[r * n + j]) * gs;
    }
  });
}

// ---------------------------------------------------------------- indexing

/// Indices of the k largest entries of every row, largest first; ties go to
/// the lowest index. Not differentiable.
inline std::vector<std::vector<std::size_t>> topk_indices(const Tensor& x, std::size_t k) {
  detail::require_rank("topk_indices", x, 2);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (k < 1 || k > cols) {
    throw ContractError("topk_indices: k=" + std::to_string(k) + " for " +
                        std::to_string(cols) + " columns");
  }
  std::vector<std::vector<std::size_t>> result(rows);
  auto xv = x.values();
  std::vector<std::size_t> order(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return xv[r * cols + a] > xv[r * cols + b];
    });
    result[r].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return result;
}

/// Rows of x[R, C] picked by index, in the given order.
inline Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  detail::require_rank("gather_rows", x, 2);
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(rows.size() * c);
  auto xv = x.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= r) throw DimensionError("gather_rows: index out of range");
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(rows[i] * c), c,
                out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  return detail::make_result("gather_rows", {rows.size(), c}, out, {x}, [x, rows, c](std::span<const double> g) {
    auto gx = detail::grad_of(x);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) gx[rows[i] * c + j] += g[i * c + j];
  });
}

/// Adjoint of gather_rows: out[rows[i], :] += x[i, :] into a zero [R, C].
inline Tensor scatter_rows(const Tensor& x, const std::vector<std::size_t>& rows,
                           std::size_t out_rows) {
  detail::require_rank("scatter_rows", x, 2);
  if (rows.size() != x.dim(0)) throw DimensionError("scatter_rows: index count mismatch");
  const std::size_t c = x.dim(1);
  std::vector<double> out(out_rows * c, 0.0);
  auto xv = x.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= out_rows) throw DimensionError("scatter_rows: index out of range");
    for (std::size_t j = 0; j < c; ++j) out[rows[i] * c + j] += xv[i * c + j];
  }
  return detail::make_result("scatter_rows", {out_rows, c}, out, {x}, [x, rows, c](std::span<const double> g) {
    auto gx = detail::grad_of(x);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[rows[i] * c + j];
  });
}

/// out[r] = x[r, cols[r]].
inline Tensor gather_cols(const Tensor& x, const std::vector<std::size_t>& cols) {
  detail::require_rank("gather_cols", x, 2);
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (cols.size() != r) throw DimensionError("gather_cols: one index per row required");
  std::vector<double> out(r);
  auto xv = x.values();
  for (std::size_t i = 0; i < r; ++i) {
    if (cols[i] >= c) throw DimensionError("gather_cols: index out of range");
    out[i] = xv[i * c + cols[i]];
  }
  return detail::make_result("gather_cols", {r}, out, {x}, [x, cols, c](std::span<const double> g) {
    auto gx = detail::grad_of(x);
    for (std::size_t i = 0; i < cols.size(); ++i) gx[i * c + cols[i]] += g[i];
  });
}

/// Vertical concatenation of [R_i, C] blocks.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no operands");
  const std::size_t c = parts.front().dim(1);
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_rank("concat_rows", p, 2);
    if (p.dim(1) != c) {
      throw DimensionError("concat_rows: shape " + shape_str(parts.front().shape()) +
                           " vs " + shape_str(p.shape()));
    }
    total += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(total * c);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return detail::make_result("concat_rows", {total, c}, out, parts, [parts](std::span<const double> g) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      auto gp = detail::grad_of(p);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
      offset += p.numel();
    }
  });
}

}  // namespace camex
