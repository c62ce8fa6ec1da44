// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "memotion/errors.hpp"
#include "memotion/rng.hpp"
#include "memotion/tensor.hpp"

namespace memotion {

/// Which part of the network a parameter belongs to. Freezing acts on groups.
enum class ParamGroup { TextEncoder, ImageEncoder, Heads };

inline std::string_view group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::TextEncoder: return "text";
    case ParamGroup::ImageEncoder: return "image";
    case ParamGroup::Heads: return "heads";
  }
  return "?";
}

template <class Real>
struct NamedParameter {
  std::string name;
  Tensor<Real> tensor;
  ParamGroup group;
  bool decay;  // false for biases and normalization parameters
};

/// Ordered collection of named parameters. The order is the serialization order.
/// Entries hold tensor handles, so const methods may still mutate values.
template <class Real>
class ParameterSet {
 public:
  Tensor<Real> add(std::string name, Shape shape, ParamGroup group, bool decay) {
    if (find(name)) throw ConfigError("duplicate parameter name " + name);
    auto t = Tensor<Real>::zeros(std::move(shape));
    t.set_trainable(true);
    items_.push_back({std::move(name), t, group, decay});
    return t;
  }

  /// Appends another set's parameters (sharing storage) under a name prefix.
  void extend(const ParameterSet& other, const std::string& prefix) {
    for (const auto& p : other.items_) {
      if (find(prefix + p.name)) throw ConfigError("duplicate parameter name " + prefix + p.name);
      items_.push_back({prefix + p.name, p.tensor, p.group, p.decay});
    }
  }

  const NamedParameter<Real>* find(std::string_view name) const {
    for (const auto& p : items_)
      if (p.name == name) return &p;
    return nullptr;
  }

  std::size_t size() const { return items_.size(); }
  const NamedParameter<Real>& operator[](std::size_t i) const { return items_[i]; }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  /// Total number of scalar parameters.
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.tensor.size();
    return n;
  }

  std::size_t count(ParamGroup group) const {
    std::size_t n = 0;
    for (const auto& p : items_)
      if (p.group == group) n += p.tensor.size();
    return n;
  }

  void set_trainable(ParamGroup group, bool on) const {
    for (const auto& p : items_)
      if (p.group == group) Tensor<Real>(p.tensor).set_trainable(on);
  }

  void zero_grad() const {
    for (const auto& p : items_) Tensor<Real>(p.tensor).clear_grad();
  }

  /// Copies values (not storage) from a set with identical names and shapes.
  template <class Other>
  void copy_values_from(const ParameterSet<Other>& src) const {
    if (src.size() != size()) {
      throw CheckpointError("parameter set sizes differ: " + std::to_string(src.size()) + " vs " +
                            std::to_string(size()));
    }
    for (std::size_t i = 0; i < size(); ++i) {
      const auto& s = src[i];
      const auto& d = items_[i];
      if (s.name != d.name || s.tensor.shape() != d.tensor.shape()) {
        throw CheckpointError("parameter mismatch: " + s.name + " " + to_string(s.tensor.shape()) +
                              " vs " + d.name + " " + to_string(d.tensor.shape()));
      }
      auto dst = Tensor<Real>(d.tensor).mutable_values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<Real>(s.tensor.values()[k]);
    }
  }

  /// Deep copy of all values, in order (used for best-so-far snapshots).
  std::vector<std::vector<Real>> snapshot() const {
    std::vector<std::vector<Real>> out;
    out.reserve(items_.size());
    for (const auto& p : items_) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
    return out;
  }

  void restore(const std::vector<std::vector<Real>>& snap) const {
    if (snap.size() != items_.size()) throw CheckpointError("snapshot size mismatch");
    for (std::size_t i = 0; i < items_.size(); ++i) {
      auto dst = Tensor<Real>(items_[i].tensor).mutable_values();
      if (snap[i].size() != dst.size()) throw CheckpointError("snapshot shape mismatch at " + items_[i].name);
      std::copy(snap[i].begin(), snap[i].end(), dst.begin());
    }
  }

 private:
  std::vector<NamedParameter<Real>> items_;
};

namespace init {

/// U(-sqrt(6/fan_in), +sqrt(6/fan_in)); for conv/ReLU stacks.
template <class Real>
void he_uniform(Tensor<Real>& t, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.mutable_values()) v = static_cast<Real>(rng.uniform(-limit, limit));
}

/// U(-sqrt(6/(fan_in+fan_out)), +...); for dense and attention projections.
template <class Real>
void glorot_uniform(Tensor<Real>& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.mutable_values()) v = static_cast<Real>(rng.uniform(-limit, limit));
}

template <class Real>
void normal(Tensor<Real>& t, double stddev, Rng& rng) {
  for (auto& v : t.mutable_values()) v = static_cast<Real>(rng.normal(0.0, stddev));
}

template <class Real>
void constant(Tensor<Real>& t, Real value) {
  for (auto& v : t.mutable_values()) v = value;
}

}  // namespace init

}  // namespace memotion
