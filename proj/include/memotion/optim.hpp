// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "memotion/errors.hpp"
#include "memotion/kv.hpp"
#include "memotion/params.hpp"
#include "memotion/tensor.hpp"

namespace memotion {

enum class OptimizerKind { Lamb, AdamWeightDecay };

inline std::string_view optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::Lamb ? "lamb" : "adamw";
}

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "lamb") return OptimizerKind::Lamb;
  if (s == "adamw" || s == "adam_weight_decay") return OptimizerKind::AdamWeightDecay;
  throw ConfigError("unknown optimizer '" + std::string(s) + "' (expected lamb or adamw)");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Lamb;
  double peak_lr = 5e-4;
  double warmup_fraction = 0.1;
  double weight_decay = 0.01;
  double epsilon = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  bool linear_decay = false;  // after warm-up: constant peak (default) or linear to 0

  void validate() const {
    if (!(peak_lr > 0.0)) throw ConfigError("optimizer: peak_lr must be positive");
    if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0))
      throw ConfigError("optimizer: warmup_fraction must be in (0, 1)");
    if (weight_decay < 0.0) throw ConfigError("optimizer: weight_decay must be non-negative");
    if (!(epsilon > 0.0)) throw ConfigError("optimizer: epsilon must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("optimizer: betas must be in [0, 1)");
  }

  /// Keys exclude peak_lr, which the training phases own.
  void read(kv::Reader& r) {
    std::string k(optimizer_name(kind));
    r.get("kind", k);
    kind = parse_optimizer(k);
    r.get("warmup_fraction", warmup_fraction);
    r.get("weight_decay", weight_decay);
    r.get("epsilon", epsilon);
    r.get("beta1", beta1);
    r.get("beta2", beta2);
    r.get("linear_decay", linear_decay);
  }

  kv::Map to_kv() const {
    return {{"kind", std::string(optimizer_name(kind))},
            {"warmup_fraction", kv::format(warmup_fraction)},
            {"weight_decay", kv::format(weight_decay)},
            {"epsilon", kv::format(epsilon)},
            {"beta1", kv::format(beta1)},
            {"beta2", kv::format(beta2)},
            {"linear_decay", kv::format(linear_decay)}};
  }
};

/// Number of warm-up steps: ceil(warmup_fraction * total_steps).
inline std::size_t warmup_steps(std::size_t total_steps, const OptimizerConfig& config) {
  return static_cast<std::size_t>(std::ceil(config.warmup_fraction * static_cast<double>(total_steps)));
}

/// Linear ramp from 0 to peak over the warm-up steps, then constant peak (or,
/// with linear_decay, a straight line down to 0 at total_steps).
inline double lr_at_step(std::size_t step, std::size_t total_steps, const OptimizerConfig& config) {
  if (step > total_steps) {
    throw InputError("lr_at_step: step " + std::to_string(step) + " beyond total " + std::to_string(total_steps));
  }
  const std::size_t warm = warmup_steps(total_steps, config);
  if (step < warm) return config.peak_lr * (static_cast<double>(step) / static_cast<double>(warm));
  if (!config.linear_decay || total_steps == warm) return config.peak_lr;
  const double remaining = static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warm);
  return config.peak_lr * remaining;
}

/// First and second moments, parallel to the parameter set order.
template <class Real>
struct OptimizerState {
  std::size_t step = 0;
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;

  static OptimizerState zeros_like(const ParameterSet<Real>& params) {
    OptimizerState s;
    for (const auto& p : params) {
      s.m.emplace_back(p.tensor.size(), Real(0));
      s.v.emplace_back(p.tensor.size(), Real(0));
    }
    return s;
  }

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

namespace detail {

template <class Real>
void check_state(const ParameterSet<Real>& params, const OptimizerState<Real>& state) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ContractError("optimizer state has " + std::to_string(state.m.size()) + " slots for " +
                        std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].tensor.size() || state.v[i].size() != params[i].tensor.size())
      throw ContractError("optimizer state shape mismatch for " + params[i].name);
  }
}

// Updates the moments of parameter i and returns the AdamW direction
// u = m_hat / (sqrt(v_hat) + eps) + wd * p.
template <class Real>
std::vector<double> adam_direction(const NamedParameter<Real>& p, std::vector<Real>& m, std::vector<Real>& v,
                                   std::size_t t, const OptimizerConfig& c) {
  const auto values = p.tensor.values();
  const auto grad = p.tensor.grad();
  const bool has_grad = p.tensor.has_grad();
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  const double wd = p.decay ? c.weight_decay : 0.0;
  std::vector<double> u(values.size());
  for (std::size_t k = 0; k < values.size(); ++k) {
    const double g = has_grad ? static_cast<double>(grad[k]) : 0.0;
    const double mk = c.beta1 * m[k] + (1.0 - c.beta1) * g;
    const double vk = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
    m[k] = static_cast<Real>(mk);
    v[k] = static_cast<Real>(vk);
    const double mhat = mk / bc1;
    const double vhat = vk / bc2;
    u[k] = mhat / (std::sqrt(vhat) + c.epsilon) + wd * static_cast<double>(values[k]);
  }
  return u;
}

}  // namespace detail

/// Adam with decoupled weight decay: p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
/// Parameters that are not trainable are skipped; biases and normalization
/// parameters (decay == false) get no weight decay.
template <class Real>
void adamw_step(const ParameterSet<Real>& params, OptimizerState<Real>& state, double lr,
                const OptimizerConfig& config) {
  detail::check_state(params, state);
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (!p.tensor.trainable()) continue;
    const auto u = detail::adam_direction(p, state.m[i], state.v[i], state.step, config);
    auto values = Tensor<Real>(p.tensor).mutable_values();
    for (std::size_t k = 0; k < values.size(); ++k)
      values[k] = static_cast<Real>(static_cast<double>(values[k]) - lr * u[k]);
  }
}

/// LAMB: the AdamW direction u rescaled per parameter tensor by the trust
/// ratio ||p|| / ||u|| (taken as 1 when either norm is zero).
template <class Real>
void lamb_step(const ParameterSet<Real>& params, OptimizerState<Real>& state, double lr,
               const OptimizerConfig& config) {
  detail::check_state(params, state);
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (!p.tensor.trainable()) continue;
    const auto u = detail::adam_direction(p, state.m[i], state.v[i], state.step, config);
    double p_norm = 0.0, u_norm = 0.0;
    for (Real v : p.tensor.values()) p_norm += static_cast<double>(v) * v;
    for (double v : u) u_norm += v * v;
    p_norm = std::sqrt(p_norm);
    u_norm = std::sqrt(u_norm);
    const double ratio = (p_norm > 0.0 && u_norm > 0.0) ? p_norm / u_norm : 1.0;
    auto values = Tensor<Real>(p.tensor).mutable_values();
    for (std::size_t k = 0; k < values.size(); ++k)
      values[k] = static_cast<Real>(static_cast<double>(values[k]) - lr * ratio * u[k]);
  }
}

template <class Real>
void optimizer_step(const ParameterSet<Real>& params, OptimizerState<Real>& state, double lr,
                    const OptimizerConfig& config) {
  if (config.kind == OptimizerKind::Lamb) {
    lamb_step(params, state, lr, config);
  } else {
    adamw_step(params, state, lr, config);
  }
}

}  // namespace memotion
