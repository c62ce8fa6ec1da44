// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "memotion/errors.hpp"
#include "memotion/heads.hpp"
#include "memotion/ops.hpp"
#include "memotion/sample.hpp"
#include "memotion/tape.hpp"
#include "memotion/tensor.hpp"

namespace memotion {

/// One weight vector per task, one entry per class.
struct ClassWeights {
  std::array<std::vector<double>, kNumTasks> per_task;

  static ClassWeights uniform() {
    ClassWeights w;
    for (Task t : kAllTasks) w.per_task[task_index(t)].assign(class_count(t), 1.0);
    return w;
  }

  std::span<const double> operator[](Task t) const { return per_task[task_index(t)]; }
};

/// Per-task label histograms.
using LabelHistograms = std::array<std::vector<std::size_t>, kNumTasks>;

inline LabelHistograms label_histograms(std::span<const LabelSet> labels) {
  LabelHistograms h;
  for (Task t : kAllTasks) h[task_index(t)].assign(class_count(t), 0);
  for (const auto& l : labels)
    for (Task t : kAllTasks) ++h[task_index(t)].at(static_cast<std::size_t>(l[t]));
  return h;
}

inline constexpr double kMinClassWeight = 0.1;
inline constexpr double kMaxClassWeight = 10.0;

/// Inverse-frequency weights N / (K * max(n_c, 1)), clipped to [0.1, 10].
inline std::vector<double> inverse_frequency_weights(std::span<const std::size_t> counts) {
  if (counts.empty()) throw InputError("class weights: empty histogram");
  std::size_t total = 0;
  for (auto c : counts) total += c;
  if (total == 0) throw InputError("class weights: histogram has no samples");
  std::vector<double> w(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const double raw = static_cast<double>(total) /
                       (static_cast<double>(counts.size()) * static_cast<double>(std::max<std::size_t>(counts[c], 1)));
    w[c] = std::clamp(raw, kMinClassWeight, kMaxClassWeight);
  }
  return w;
}

inline ClassWeights compute_class_weights(const LabelHistograms& histograms) {
  ClassWeights w;
  for (Task t : kAllTasks) {
    const auto& h = histograms[task_index(t)];
    if (h.size() != class_count(t)) {
      throw InputError("class weights: " + std::string(task_name(t)) + " histogram has " +
                       std::to_string(h.size()) + " bins, expected " + std::to_string(class_count(t)));
    }
    w.per_task[task_index(t)] = inverse_frequency_weights(h);
  }
  return w;
}

/// Single-sample weighted cross-entropy: -w[label] * log(max(p[label], 1e-12)).
inline double weighted_cross_entropy(std::span<const double> probs, int label, std::span<const double> weights) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size())
    throw InputError("cross_entropy: label " + std::to_string(label) + " out of range");
  if (weights.size() != probs.size()) throw ShapeError("cross_entropy: weight/probability size mismatch");
  const auto y = static_cast<std::size_t>(label);
  return -weights[y] * std::log(std::max(probs[y], ops::kProbabilityFloor));
}

template <class Real>
struct LossReport {
  std::array<Tensor<Real>, kNumTasks> per_task;  // [1] each, batch-averaged
  Tensor<Real> total;                            // sum of the five

  double value(Task t) const { return static_cast<double>(per_task[task_index(t)].item()); }
};

/// Sum of the five per-task weighted cross-entropies, equally weighted.
template <class Real>
LossReport<Real> total_loss(Tape<Real>& tape, const HeadOutputs<Real>& outputs, std::span<const LabelSet> labels,
                            const ClassWeights& weights) {
  if (labels.size() != outputs.batch()) {
    throw ShapeError("total_loss: " + std::to_string(labels.size()) + " label sets for a batch of " +
                     std::to_string(outputs.batch()));
  }
  LossReport<Real> report;
  std::vector<int> y(labels.size());
  for (Task t : kAllTasks) {
    for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i][t];
    report.per_task[task_index(t)] = ops::weighted_cross_entropy(tape, outputs[t], y, weights[t]);
  }
  Tensor<Real> acc = report.per_task[0];
  for (std::size_t k = 1; k < kNumTasks; ++k) acc = ops::add(tape, acc, report.per_task[k]);
  report.total = acc;
  return report;
}

}  // namespace memotion
