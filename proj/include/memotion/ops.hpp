// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "memotion/errors.hpp"
#include "memotion/rng.hpp"
#include "memotion/tape.hpp"
#include "memotion/tensor.hpp"

// Differentiable operations. Each op computes its output eagerly and, when any
// input requires a gradient, records a backward rule on the tape. Backward
// rules accumulate (+=) into input gradients so shared subexpressions sum.
namespace memotion::ops {

namespace detail {

template <class Real>
std::string shape_of(const Tensor<Real>& t) {
  return to_string(t.shape());
}

template <class Real>
void require_rank(const char* op, const Tensor<Real>& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_of(t));
  }
}

template <class Real>
void require_same_shape(const char* op, const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_of(a) + " vs " + shape_of(b));
  }
}

// C[m,n] += A[m,k] * B[k,n]
template <class Real>
void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* crow = c + i * n;
    const Real* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = arow[p];
      const Real* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <class Real>
void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const Real* brow = b + j * k;
      // Eight independent partial sums let the compiler vectorize without
      // reassociation; the summation order is fixed.
      Real lane[8] = {};
      std::size_t p = 0;
      for (; p + 8 <= k; p += 8)
        for (std::size_t l = 0; l < 8; ++l) lane[l] += arow[p + l] * brow[p + l];
      Real acc = ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
      for (; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
template <class Real>
void gemm_tn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const Real* arow = a + p * m;
    const Real* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const Real av = arow[i];
      Real* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Splits a tensor into (rows, cols) around its last axis.
template <class Real>
std::pair<std::size_t, std::size_t> rows_cols(const Tensor<Real>& t) {
  const std::size_t cols = t.shape().back();
  return {t.size() / cols, cols};
}

}  // namespace detail

template <class Real>
Tensor<Real> matmul(Tape<Real>& tape, const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + detail::shape_of(a) + " by " +
                     detail::shape_of(b));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = Tensor<Real>::zeros({m, n});
  detail::gemm_nn(a.data(), b.data(), out.mutable_data(), m, k, n);
  tape.record("matmul", out, {a, b}, [a, b, out, m, k, n] {
    const Real* dc = out.grad().data();
    if (a.requires_grad()) detail::gemm_nt(dc, b.data(), a.ensure_grad().data(), m, n, k);
    if (b.requires_grad()) detail::gemm_tn(a.data(), dc, b.ensure_grad().data(), k, m, n);
  });
  return out;
}

template <class Real>
Tensor<Real> transpose(Tape<Real>& tape, const Tensor<Real>& a) {
  detail::require_rank("transpose", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  auto out = Tensor<Real>::zeros({n, m});
  Real* o = out.mutable_data();
  const Real* x = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o[j * m + i] = x[i * n + j];
  tape.record("transpose", out, {a}, [a, out, m, n] {
    const Real* g = out.grad().data();
    Real* ga = a.ensure_grad().data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
  return out;
}

template <class Real>
Tensor<Real> add(Tape<Real>& tape, const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape("add", a, b);
  auto out = Tensor<Real>::zeros(a.shape());
  Real* o = out.mutable_data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = a.data()[i] + b.data()[i];
  tape.record("add", out, {a, b}, [a, b, out] {
    auto g = out.grad();
    for (const auto* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto gt = t->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
    }
  });
  return out;
}

/// x[..., n] + bias[n], broadcasting the bias over every leading index.
template <class Real>
Tensor<Real> add_bias(Tape<Real>& tape, const Tensor<Real>& x, const Tensor<Real>& bias) {
  detail::require_rank("add_bias", bias, 1);
  if (x.shape().back() != bias.dim(0)) {
    throw ShapeError("add_bias: " + detail::shape_of(x) + " + " + detail::shape_of(bias));
  }
  const auto [rows, cols] = detail::rows_cols(x);
  auto out = Tensor<Real>::zeros(x.shape());
  Real* o = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) o[r * cols + c] = x.data()[r * cols + c] + bias.data()[c];
  tape.record("add_bias", out, {x, bias}, [x, bias, out, rows = rows, cols = cols] {
    auto g = out.grad();
    if (x.requires_grad()) {
      auto gx = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (bias.requires_grad()) {
      auto gb = bias.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
    }
  });
  return out;
}

template <class Real>
Tensor<Real> mul(Tape<Real>& tape, const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape("mul", a, b);
  auto out = Tensor<Real>::zeros(a.shape());
  Real* o = out.mutable_data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = a.data()[i] * b.data()[i];
  tape.record("mul", out, {a, b}, [a, b, out] {
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
    }
    if (b.requires_grad()) {
      auto gb = b.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
    }
  });
  return out;
}

template <class Real>
Tensor<Real> scale(Tape<Real>& tape, const Tensor<Real>& x, Real factor) {
  auto out = Tensor<Real>::zeros(x.shape());
  Real* o = out.mutable_data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = x.data()[i] * factor;
  tape.record("scale", out, {x}, [x, out, factor] {
    auto g = out.grad();
    auto gx = x.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
  return out;
}

/// Sum of all elements as a [1] tensor.
template <class Real>
Tensor<Real> sum(Tape<Real>& tape, const Tensor<Real>& x) {
  double acc = 0.0;
  for (Real v : x.values()) acc += v;
  auto out = Tensor<Real>::scalar(static_cast<Real>(acc));
  tape.record("sum", out, {x}, [x, out] {
    const Real g = out.grad()[0];
    for (auto& v : x.ensure_grad()) v += g;
  });
  return out;
}

template <class Real>
Tensor<Real> mean(Tape<Real>& tape, const Tensor<Real>& x) {
  return scale(tape, sum(tape, x), static_cast<Real>(1.0 / static_cast<double>(x.size())));
}

template <class Real>
Tensor<Real> reshape(Tape<Real>& tape, const Tensor<Real>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + detail::shape_of(x) + " as " + to_string(shape));
  }
  auto out = Tensor<Real>::from(std::move(shape), std::vector<Real>(x.values().begin(), x.values().end()));
  tape.record("reshape", out, {x}, [x, out] {
    auto g = out.grad();
    auto gx = x.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise activations

template <class Real>
Tensor<Real> relu(Tape<Real>& tape, const Tensor<Real>& x) {
  auto out = Tensor<Real>::zeros(x.shape());
  Real* o = out.mutable_data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = x.data()[i] > Real(0) ? x.data()[i] : Real(0);
  tape.record("relu", out, {x}, [x, out] {
    auto g = out.grad();
    auto gx = x.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x.data()[i] > Real(0)) gx[i] += g[i];
  });
  return out;
}

/// Exact (erf) GELU.
template <class Real>
Tensor<Real> gelu(Tape<Real>& tape, const Tensor<Real>& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  auto out = Tensor<Real>::zeros(x.shape());
  Real* o = out.mutable_data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    o[i] = static_cast<Real>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  }
  tape.record("gelu", out, {x}, [x, out] {
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    auto g = out.grad();
    auto gx = x.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = x.data()[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx[i] += static_cast<Real>(g[i] * (cdf + v * pdf));
    }
  });
  return out;
}

template <class Real>
Tensor<Real> tanh(Tape<Real>& tape, const Tensor<Real>& x) {
  auto out = Tensor<Real>::zeros(x.shape());
  Real* o = out.mutable_data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = std::tanh(x.data()[i]);
  tape.record("tanh", out, {x}, [x, out] {
    auto g = out.grad();
    auto gx = x.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real y = out.data()[i];
      gx[i] += g[i] * (Real(1) - y * y);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

/// Softmax over the last axis (each row of a matrix, or a whole vector).
template <class Real>
Tensor<Real> softmax(Tape<Real>& tape, const Tensor<Real>& x) {
  const auto [rows, cols] = detail::rows_cols(x);
  auto out = Tensor<Real>::zeros(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = x.data() + r * cols;
    Real* yr = out.mutable_data() + r * cols;
    const Real mx = *std::max_element(xr, xr + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      total += yr[c];
    }
    for (std::size_t c = 0; c < cols; ++c) yr[c] = static_cast<Real>(yr[c] / total);
  }
  tape.record("softmax", out, {x}, [x, out, rows = rows, cols = cols] {
    auto g = out.grad();
    auto gx = x.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const Real* y = out.data() + r * cols;
      const Real* gy = g.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += static_cast<double>(y[c]) * gy[c];
      for (std::size_t c = 0; c < cols; ++c)
        gx[r * cols + c] += static_cast<Real>(y[c] * (gy[c] - dot));
    }
  });
  return out;
}

/// Layer normalization over the last axis with learned gain and shift.
template <class Real>
Tensor<Real> layer_norm(Tape<Real>& tape, const Tensor<Real>& x, const Tensor<Real>& gamma,
                        const Tensor<Real>& beta, double eps = 1e-12) {
  detail::require_rank("layer_norm", gamma, 1);
  detail::require_same_shape("layer_norm", gamma, beta);
  if (x.shape().back() != gamma.dim(0)) {
    throw ShapeError("layer_norm: input " + detail::shape_of(x) + " vs gain " +
                     detail::shape_of(gamma));
  }
  const auto [rows, cols] = detail::rows_cols(x);
  auto out = Tensor<Real>::zeros(x.shape());
  std::vector<Real> xhat(x.size());
  std::vector<Real> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = x.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = static_cast<Real>(inv);
    for (std::size_t c = 0; c < cols; ++c) {
      const Real h = static_cast<Real>((xr[c] - mu) * inv);
      xhat[r * cols + c] = h;
      out.mutable_data()[r * cols + c] = h * gamma.data()[c] + beta.data()[c];
    }
  }
  tape.record("layer_norm", out, {x, gamma, beta},
              [x, gamma, beta, out, xhat = std::move(xhat), inv_std = std::move(inv_std),
               rows = rows, cols = cols] {
                auto g = out.grad();
                if (gamma.requires_grad()) {
                  auto gg = gamma.ensure_grad();
                  for (std::size_t i = 0; i < g.size(); ++i) gg[i % cols] += g[i] * xhat[i];
                }
                if (beta.requires_grad()) {
                  auto gb = beta.ensure_grad();
                  for (std::size_t i = 0; i < g.size(); ++i) gb[i % cols] += g[i];
                }
                if (!x.requires_grad()) return;
                auto gx = x.ensure_grad();
                for (std::size_t r = 0; r < rows; ++r) {
                  double mean_d = 0.0, mean_dx = 0.0;
                  for (std::size_t c = 0; c < cols; ++c) {
                    const double d = static_cast<double>(g[r * cols + c]) * gamma.data()[c];
                    mean_d += d;
                    mean_dx += d * xhat[r * cols + c];
                  }
                  mean_d /= static_cast<double>(cols);
                  mean_dx /= static_cast<double>(cols);
                  for (std::size_t c = 0; c < cols; ++c) {
                    const double d = static_cast<double>(g[r * cols + c]) * gamma.data()[c];
                    gx[r * cols + c] += static_cast<Real>(
                        inv_std[r] * (d - mean_d - xhat[r * cols + c] * mean_dx));
                  }
                }
              });
  return out;
}

/// Inverted dropout. Identity (the same tensor handle) when not training or
/// when rate == 0; otherwise kept units are scaled by 1/(1-rate).
template <class Real>
Tensor<Real> dropout(Tape<Real>& tape, const Tensor<Real>& x, double rate, bool train, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must be in [0, 1)");
  if (!train || rate == 0.0) return x;
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - rate));
  std::vector<Real> mask(x.size());
  for (auto& m : mask) m = rng.uniform() >= rate ? keep_scale : Real(0);
  auto out = Tensor<Real>::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out.mutable_data()[i] = x.data()[i] * mask[i];
  tape.record("dropout", out, {x}, [x, out, mask = std::move(mask)] {
    auto g = out.grad();
    auto gx = x.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Structural ops

/// Concatenates along the last axis; all inputs share their leading axes.
template <class Real>
Tensor<Real> concat(Tape<Real>& tape, const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != lead.size() + 1 ||
        !std::equal(lead.begin(), lead.end(), p.shape().begin())) {
      throw ShapeError("concat: " + detail::shape_of(parts[0]) + " incompatible with " +
                       detail::shape_of(p));
    }
    widths.push_back(p.shape().back());
    total += p.shape().back();
  }
  const std::size_t rows = numel(lead.empty() ? Shape{1} : lead);
  Shape shape = lead;
  shape.push_back(total);
  auto out = Tensor<Real>::zeros(shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(parts[k].data() + r * widths[k], widths[k], out.mutable_data() + r * total + offset);
    offset += widths[k];
  }
  tape.record("concat", out, parts, [parts, out, widths, rows, total] {
    auto g = out.grad();
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (parts[k].requires_grad()) {
        auto gp = parts[k].ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) gp[r * widths[k] + c] += g[r * total + off + c];
      }
      off += widths[k];
    }
  });
  return out;
}

template <class Real>
Tensor<Real> concat(Tape<Real>& tape, const Tensor<Real>& a, const Tensor<Real>& b) {
  return concat(tape, std::vector<Tensor<Real>>{a, b});
}

/// Slice [begin, begin+count) of the last axis.
template <class Real>
Tensor<Real> narrow(Tape<Real>& tape, const Tensor<Real>& x, std::size_t begin, std::size_t count) {
  const auto [rows, cols] = detail::rows_cols(x);
  if (count == 0 || begin + count > cols) {
    throw ShapeError("narrow: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + detail::shape_of(x));
  }
  Shape shape = x.shape();
  shape.back() = count;
  auto out = Tensor<Real>::zeros(shape);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data() + r * cols + begin, count, out.mutable_data() + r * count);
  tape.record("narrow", out, {x}, [x, out, begin, count, rows = rows, cols = cols] {
    auto g = out.grad();
    auto gx = x.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < count; ++c) gx[r * cols + begin + c] += g[r * count + c];
  });
  return out;
}

/// Inverse of a two-way concat: the first `first` columns and the rest.
template <class Real>
std::pair<Tensor<Real>, Tensor<Real>> split(Tape<Real>& tape, const Tensor<Real>& x, std::size_t first) {
  const std::size_t cols = x.shape().back();
  return {narrow(tape, x, 0, first), narrow(tape, x, first, cols - first)};
}

/// Rows [begin, begin+count) of the first axis.
template <class Real>
Tensor<Real> slice_rows(Tape<Real>& tape, const Tensor<Real>& x, std::size_t begin, std::size_t count) {
  const std::size_t stride = x.size() / x.dim(0);
  if (count == 0 || begin + count > x.dim(0)) {
    throw ShapeError("slice_rows: range outside " + detail::shape_of(x));
  }
  Shape shape = x.shape();
  shape[0] = count;
  auto out = Tensor<Real>::zeros(shape);
  std::copy_n(x.data() + begin * stride, count * stride, out.mutable_data());
  tape.record("slice_rows", out, {x}, [x, out, begin, stride] {
    auto g = out.grad();
    auto gx = x.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * stride + i] += g[i];
  });
  return out;
}

/// Stacks equally shaped tensors along a new leading axis.
template <class Real>
Tensor<Real> stack(Tape<Real>& tape, const std::vector<Tensor<Real>>& items) {
  if (items.empty()) throw ShapeError("stack: no inputs");
  for (const auto& t : items) detail::require_same_shape("stack", items[0], t);
  const std::size_t stride = items[0].size();
  Shape shape{items.size()};
  shape.insert(shape.end(), items[0].shape().begin(), items[0].shape().end());
  auto out = Tensor<Real>::zeros(shape);
  for (std::size_t k = 0; k < items.size(); ++k)
    std::copy_n(items[k].data(), stride, out.mutable_data() + k * stride);
  tape.record("stack", out, items, [items, out, stride] {
    auto g = out.grad();
    for (std::size_t k = 0; k < items.size(); ++k) {
      if (!items[k].requires_grad()) continue;
      auto gk = items[k].ensure_grad();
      for (std::size_t i = 0; i < stride; ++i) gk[i] += g[k * stride + i];
    }
  });
  return out;
}

/// Gathers rows of table[V, E]; backward scatters into the gathered rows.
template <class Real>
Tensor<Real> embedding_lookup(Tape<Real>& tape, const Tensor<Real>& table,
                              std::span<const std::int32_t> ids) {
  detail::require_rank("embedding_lookup", table, 2);
  if (ids.empty()) throw ShapeError("embedding_lookup: empty id sequence");
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw InputError("embedding_lookup: id " + std::to_string(id) + " outside table of " +
                       std::to_string(vocab) + " rows");
    }
  }
  std::vector<std::int32_t> rows(ids.begin(), ids.end());
  auto out = Tensor<Real>::zeros({rows.size(), width});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(table.data() + static_cast<std::size_t>(rows[i]) * width, width,
                out.mutable_data() + i * width);
  tape.record("embedding_lookup", out, {table}, [table, out, rows = std::move(rows), width] {
    auto g = out.grad();
    auto gt = table.ensure_grad();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < width; ++c)
        gt[static_cast<std::size_t>(rows[i]) * width + c] += g[i * width + c];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Convolutional ops (single image, channel-major)

/// 3x3 cross-correlation with zero padding 1 and stride 1, plus bias.
template <class Real>
Tensor<Real> conv2d(Tape<Real>& tape, const Tensor<Real>& x, const Tensor<Real>& kernels,
                    const Tensor<Real>& bias) {
  detail::require_rank("conv2d", x, 3);
  detail::require_rank("conv2d", kernels, 4);
  detail::require_rank("conv2d", bias, 1);
  if (kernels.dim(2) != 3 || kernels.dim(3) != 3) {
    throw ShapeError("conv2d: kernels must be 3x3, got " + detail::shape_of(kernels));
  }
  if (kernels.dim(1) != x.dim(0) || bias.dim(0) != kernels.dim(0)) {
    throw ShapeError("conv2d: input " + detail::shape_of(x) + ", kernels " +
                     detail::shape_of(kernels) + ", bias " + detail::shape_of(bias));
  }
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2), cout = kernels.dim(0);
  const std::size_t plane = h * w;
  auto out = Tensor<Real>::zeros({cout, h, w});

  // Visits every (output pixel, input pixel, weight) triple of the padded
  // correlation as contiguous row segments.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t ky = 0; ky < 3; ++ky)
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const std::size_t widx = ((co * cin + ci) * 3 + ky) * 3 + kx;
            const std::size_t y0 = ky == 0 ? 1 : 0, y1 = ky == 2 ? h - 1 : h;
            const std::size_t x0 = kx == 0 ? 1 : 0, x1 = kx == 2 ? w - 1 : w;
            if (x1 <= x0) continue;
            for (std::size_t y = y0; y < y1; ++y) {
              const std::size_t orow = co * plane + y * w;
              const std::size_t irow = ci * plane + (y + ky - 1) * w + (kx - 1);
              fn(widx, orow, irow, x0, x1);
            }
          }
  };

  Real* o = out.mutable_data();
  for (std::size_t co = 0; co < cout; ++co) std::fill_n(o + co * plane, plane, bias.data()[co]);
  const Real* in = x.data();
  const Real* k = kernels.data();
  for_each_tap([&](std::size_t widx, std::size_t orow, std::size_t irow, std::size_t x0, std::size_t x1) {
    const Real wv = k[widx];
    for (std::size_t c = x0; c < x1; ++c) o[orow + c] += wv * in[irow + c];
  });

  tape.record("conv2d", out, {x, kernels, bias},
              [x, kernels, bias, out, for_each_tap, cout, plane] {
                const Real* g = out.grad().data();
                if (bias.requires_grad()) {
                  auto gb = bias.ensure_grad();
                  for (std::size_t co = 0; co < cout; ++co) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) acc += g[co * plane + i];
                    gb[co] += static_cast<Real>(acc);
                  }
                }
                if (kernels.requires_grad()) {
                  Real* gk = kernels.ensure_grad().data();
                  const Real* in = x.data();
                  for_each_tap([&](std::size_t widx, std::size_t orow, std::size_t irow,
                                   std::size_t x0, std::size_t x1) {
                    Real acc = 0;
                    for (std::size_t c = x0; c < x1; ++c) acc += g[orow + c] * in[irow + c];
                    gk[widx] += acc;
                  });
                }
                if (x.requires_grad()) {
                  Real* gx = x.ensure_grad().data();
                  const Real* k = kernels.data();
                  for_each_tap([&](std::size_t widx, std::size_t orow, std::size_t irow,
                                   std::size_t x0, std::size_t x1) {
                    const Real wv = k[widx];
                    for (std::size_t c = x0; c < x1; ++c) gx[irow + c] += wv * g[orow + c];
                  });
                }
              });
  return out;
}

/// 2x2 max pooling with stride 2. Ties resolve to the first element of the
/// window in row-major order, which also receives the gradient.
template <class Real>
Tensor<Real> maxpool2d(Tape<Real>& tape, const Tensor<Real>& x) {
  detail::require_rank("maxpool2d", x, 3);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2d: spatial size must be even, got " + detail::shape_of(x));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  auto out = Tensor<Real>::zeros({c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  const Real* in = x.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = ch * h * w + (2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = ch * h * w + (2 * oy + dy) * w + 2 * ox + dx;
            if (in[idx] > in[best]) best = idx;
          }
        const std::size_t o = (ch * oh + oy) * ow + ox;
        argmax[o] = best;
        out.mutable_data()[o] = in[best];
      }
  tape.record("maxpool2d", out, {x}, [x, out, argmax = std::move(argmax)] {
    auto g = out.grad();
    auto gx = x.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
  });
  return out;
}

/// Per-channel spatial mean: [C, H, W] -> [C].
template <class Real>
Tensor<Real> global_avg_pool(Tape<Real>& tape, const Tensor<Real>& x) {
  detail::require_rank("global_avg_pool", x, 3);
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  auto out = Tensor<Real>::zeros({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += x.data()[ch * plane + i];
    out.mutable_data()[ch] = static_cast<Real>(acc / static_cast<double>(plane));
  }
  tape.record("global_avg_pool", out, {x}, [x, out, c, plane] {
    auto g = out.grad();
    auto gx = x.ensure_grad();
    const Real inv = static_cast<Real>(1.0 / static_cast<double>(plane));
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < plane; ++i) gx[ch * plane + i] += g[ch] * inv;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kProbabilityFloor = 1e-12;

/// Class-weighted categorical cross-entropy on probabilities, averaged over
/// the batch: -(1/N) sum_i w[y_i] * log(max(p_i[y_i], 1e-12)).
/// `probs` is [N, K] (or [K] for a single sample).
template <class Real>
Tensor<Real> weighted_cross_entropy(Tape<Real>& tape, const Tensor<Real>& probs,
                                    std::span<const int> labels, std::span<const double> weights) {
  if (probs.rank() > 2) throw ShapeError("cross_entropy: probabilities must be [N, K] or [K]");
  const auto [n, k] = detail::rows_cols(probs);
  if (labels.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  if (weights.size() != k) {
    throw ShapeError("cross_entropy: " + std::to_string(weights.size()) + " class weights for " +
                     std::to_string(k) + " classes");
  }
  std::vector<int> y(labels.begin(), labels.end());
  for (int label : y) {
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw InputError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                       std::to_string(k) + ")");
    }
  }
  std::vector<double> w(weights.begin(), weights.end());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = probs.data()[i * k + static_cast<std::size_t>(y[i])];
    total += -w[static_cast<std::size_t>(y[i])] * std::log(std::max(p, kProbabilityFloor));
  }
  auto out = Tensor<Real>::scalar(static_cast<Real>(total / static_cast<double>(n)));
  tape.record("cross_entropy", out, {probs}, [probs, out, y = std::move(y), w = std::move(w), n = n, k = k] {
    const double g = out.grad()[0];
    auto gp = probs.ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t idx = i * k + static_cast<std::size_t>(y[i]);
      const double p = probs.data()[idx];
      if (p > kProbabilityFloor) {
        gp[idx] += static_cast<Real>(-g * w[static_cast<std::size_t>(y[i])] / (static_cast<double>(n) * p));
      }
    }
  });
  return out;
}

}  // namespace memotion::ops
