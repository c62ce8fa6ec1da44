// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "memotion/errors.hpp"
#include "memotion/tape.hpp"
#include "memotion/tensor.hpp"

namespace memotion {

/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
  return std::fabs(analytic - numeric) / denom;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t checked = 0;

  void merge(const GradCheckResult& other) {
    if (other.checked > 0 && (checked == 0 || other.max_rel_error > max_rel_error)) {
      max_rel_error = other.max_rel_error;
      worst_index = other.worst_index;
      analytic_at_worst = other.analytic_at_worst;
      numeric_at_worst = other.numeric_at_worst;
    }
    checked += other.checked;
  }
};

/// Central difference (f(x+eps) - f(x-eps)) / 2eps for each listed coordinate
/// of `values`. `loss` re-evaluates the scalar function from the current
/// contents of `values`; every coordinate is restored afterwards.
template <class Real, class Loss>
std::vector<double> central_differences(Loss&& loss, std::span<Real> values, double eps,
                                        std::span<const std::size_t> coords) {
  if (!(eps > 0.0)) throw ContractError("central_differences: epsilon must be positive");
  std::vector<double> out;
  out.reserve(coords.size());
  for (std::size_t idx : coords) {
    const Real saved = values[idx];
    values[idx] = static_cast<Real>(saved + eps);
    const double plus = loss();
    values[idx] = static_cast<Real>(saved - eps);
    const double minus = loss();
    values[idx] = saved;
    out.push_back((plus - minus) / (2.0 * eps));
  }
  return out;
}

inline GradCheckResult compare_gradients(std::span<const double> analytic,
                                         std::span<const double> numeric,
                                         std::span<const std::size_t> coords) {
  GradCheckResult r;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double e = relative_error(analytic[i], numeric[i]);
    if (r.checked == 0 || e > r.max_rel_error) {
      r.max_rel_error = e;
      r.worst_index = coords[i];
      r.analytic_at_worst = analytic[i];
      r.numeric_at_worst = numeric[i];
    }
    ++r.checked;
  }
  return r;
}

/// Checks the reverse-mode gradient of a scalar function of one tensor against
/// central differences at the same precision.
///
/// `f(tape, x)` must build its result on `tape` and return a [1] tensor. The
/// tensor `x` is marked trainable for the duration of the check.
template <class Real, class F>
GradCheckResult finite_diff_check(F&& f, Tensor<Real> x, double eps) {
  if (!(eps > 0.0)) throw ContractError("finite_diff_check: epsilon must be positive");
  const bool was_trainable = x.trainable();
  x.set_trainable(true);
  x.clear_grad();
  {
    Tape<Real> tape;
    auto loss = f(tape, x);
    tape.backward(loss);
  }
  std::vector<double> analytic(x.grad().begin(), x.grad().end());
  x.clear_grad();
  x.set_trainable(was_trainable);

  std::vector<std::size_t> coords(x.size());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  auto numeric = central_differences<Real>(
      [&] {
        Tape<Real> quiet(false);
        return static_cast<double>(f(quiet, x).item());
      },
      x.mutable_values(), eps, coords);
  return compare_gradients(analytic, numeric, coords);
}

}  // namespace memotion
