// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "memotion/errors.hpp"
#include "memotion/tensor.hpp"

namespace memotion {

/// Records differentiable operations in execution order.
///
/// An operation is recorded only when the tape is recording and at least one
/// input requires a gradient; its output is then marked as requiring one too.
/// Because an op can only consume tensors that already exist, the recording
/// order is a topological order of the graph.
template <class Real>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return entries_.size(); }
  const std::string& op_name(std::size_t i) const { return entries_.at(i).name; }

  /// Registers `out` as produced from `inputs`; `backward` reads out's gradient
  /// and accumulates into the inputs that require gradients.
  void record(const char* name, const Tensor<Real>& out,
              std::initializer_list<Tensor<Real>> inputs, std::function<void()> backward) {
    record(name, out, std::vector<Tensor<Real>>(inputs), std::move(backward));
  }

  void record(const char* name, const Tensor<Real>& out, std::vector<Tensor<Real>> inputs,
              std::function<void()> backward) {
    if (!recording_) return;
    bool needed = false;
    for (const auto& in : inputs) needed = needed || in.requires_grad();
    if (!needed) return;
    out.mark_derived();
    entries_.push_back({name, out, std::move(backward)});
  }

  /// Reverse pass from a scalar loss. Gradients accumulate into existing
  /// buffers, so call zero_grad on parameters between steps.
  void backward(const Tensor<Real>& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw ContractError("backward() needs a scalar loss, got shape " +
                          (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
    }
    std::size_t end = entries_.size();
    while (end > 0 && !entries_[end - 1].output.same(loss)) --end;
    if (end == 0) throw ContractError("backward(): loss was not produced on this tape");

    auto g = loss.ensure_grad();
    g[0] += Real(1);
    for (std::size_t i = end; i-- > 0;) {
      auto& e = entries_[i];
      if (!e.output.has_grad()) continue;  // not reachable from the loss
      e.backward();
    }
  }

  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::string name;
    Tensor<Real> output;
    std::function<void()> backward;
  };

  bool recording_;
  std::vector<Entry> entries_;
};

}  // namespace memotion
