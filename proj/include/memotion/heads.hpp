// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "memotion/errors.hpp"
#include "memotion/ops.hpp"
#include "memotion/params.hpp"
#include "memotion/rng.hpp"
#include "memotion/sample.hpp"
#include "memotion/tape.hpp"
#include "memotion/tensor.hpp"

namespace memotion {

struct HeadBankConfig {
  std::size_t hidden1 = 512;
  std::size_t hidden2 = 256;
  double head_dropout = 0.3;
  double feature_dropout = 0.1;

  void validate() const {
    if (hidden1 == 0 || hidden2 == 0) throw ConfigError("heads: hidden sizes must be positive");
    for (double r : {head_dropout, feature_dropout})
      if (r < 0.0 || r >= 1.0) throw ConfigError("heads: dropout rates must be in [0, 1)");
  }
};

/// Per-task class probabilities, each [batch, classes].
template <class Real>
struct HeadOutputs {
  std::array<Tensor<Real>, kNumTasks> probs;

  const Tensor<Real>& operator[](Task t) const { return probs[task_index(t)]; }
  std::size_t batch() const { return probs[0].dim(0); }
};

/// Five independent classifiers on a shared feature vector:
/// dense(d->hidden1)+ReLU+dropout, dense(->hidden2)+ReLU+dropout, dense(->K)+softmax.
template <class Real>
class HeadBank {
 public:
  HeadBank(std::size_t input_dim, const HeadBankConfig& config, std::uint64_t seed)
      : input_dim_(input_dim), config_(config) {
    config_.validate();
    if (input_dim == 0) throw ConfigError("heads: input dimension must be positive");
    Rng rng(seed);
    for (Task t : kAllTasks) {
      const std::string p = std::string(task_name(t)) + ".";
      Head& h = heads_[task_index(t)];
      h.layers[0] = add_dense(p + "hidden1", input_dim, config_.hidden1, rng);
      h.layers[1] = add_dense(p + "hidden2", config_.hidden1, config_.hidden2, rng);
      h.layers[2] = add_dense(p + "output", config_.hidden2, class_count(t), rng);
    }
  }

  HeadBank(const HeadBank&) = delete;
  HeadBank& operator=(const HeadBank&) = delete;
  HeadBank(HeadBank&&) noexcept = default;
  HeadBank& operator=(HeadBank&&) noexcept = default;

  const HeadBankConfig& config() const { return config_; }
  const ParameterSet<Real>& parameters() const { return params_; }
  std::size_t input_dim() const { return input_dim_; }

  /// Layer shapes of one head as (in, out) pairs, for structural checks.
  std::array<std::pair<std::size_t, std::size_t>, 3> layer_shapes(Task t) const {
    std::array<std::pair<std::size_t, std::size_t>, 3> out;
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& w = heads_[task_index(t)].layers[i].weight;
      out[i] = {w.dim(0), w.dim(1)};
    }
    return out;
  }

  /// `features` is [batch, d]. Dropout masks are drawn from `rng` only in training.
  HeadOutputs<Real> forward(Tape<Real>& tape, const Tensor<Real>& features, bool train, Rng& rng) const {
    if (features.rank() != 2 || features.dim(1) != input_dim_) {
      throw ShapeError("heads: expected [batch x " + std::to_string(input_dim_) + "] features, got " +
                       to_string(features.shape()));
    }
    Tensor<Real> shared = ops::dropout(tape, features, config_.feature_dropout, train, rng);
    HeadOutputs<Real> out;
    for (Task t : kAllTasks) {
      const Head& h = heads_[task_index(t)];
      Tensor<Real> x = shared;
      for (std::size_t i = 0; i < 2; ++i) {
        x = ops::relu(tape, dense(tape, x, h.layers[i]));
        x = ops::dropout(tape, x, config_.head_dropout, train, rng);
      }
      out.probs[task_index(t)] = ops::softmax(tape, dense(tape, x, h.layers[2]));
    }
    return out;
  }

 private:
  struct Dense {
    Tensor<Real> weight, bias;
  };
  struct Head {
    std::array<Dense, 3> layers;
  };

  Dense add_dense(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    Dense d;
    d.weight = params_.add(name + ".weight", {in, out}, ParamGroup::Heads, true);
    init::glorot_uniform(d.weight, in, out, rng);
    d.bias = params_.add(name + ".bias", {out}, ParamGroup::Heads, false);
    return d;
  }

  static Tensor<Real> dense(Tape<Real>& tape, const Tensor<Real>& x, const Dense& d) {
    return ops::add_bias(tape, ops::matmul(tape, x, d.weight), d.bias);
  }

  std::size_t input_dim_;
  HeadBankConfig config_;
  ParameterSet<Real> params_;
  std::array<Head, kNumTasks> heads_;
};

}  // namespace memotion
