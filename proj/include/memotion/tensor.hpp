// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "memotion/errors.hpp"

namespace memotion {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <class Real>
class Tape;

/// Shared handle to an n-dimensional row-major array plus its gradient.
///
/// Copies of a Tensor alias the same storage; use clone() for a deep copy.
/// A default-constructed Tensor is empty (defined() == false).
template <class Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;

  static Tensor zeros(Shape shape) {
    validate(shape);
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->values.assign(numel(shape), Real(0));
    t.impl_->shape = std::move(shape);
    return t;
  }

  static Tensor full(Shape shape, Real value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.impl_->values.begin(), t.impl_->values.end(), value);
    return t;
  }

  static Tensor from(Shape shape, std::vector<Real> values) {
    validate(shape);
    if (numel(shape) != values.size()) {
      throw ShapeError("tensor of shape " + to_string(shape) + " needs " +
                       std::to_string(numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->values = std::move(values);
    return t;
  }

  static Tensor scalar(Real value) { return from({1}, {value}); }

  bool defined() const { return static_cast<bool>(impl_); }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->values.size(); }

  std::span<const Real> values() const { return impl_->values; }
  std::span<Real> mutable_values() { return impl_->values; }
  const Real* data() const { return impl_->values.data(); }
  Real* mutable_data() { return impl_->values.data(); }

  Real item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return impl_->values[0];
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const Real> grad() const { return impl_->grad; }
  std::span<Real> mutable_grad() { return impl_->grad; }

  /// Allocates a zero gradient buffer if none exists and returns it.
  std::span<Real> ensure_grad() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), Real(0));
    return impl_->grad;
  }

  void zero_grad() {
    std::fill(impl_->grad.begin(), impl_->grad.end(), Real(0));
  }
  void clear_grad() { impl_->grad.clear(); impl_->grad.shrink_to_fit(); }

  /// Trainable tensors are the leaves the optimizer updates.
  bool trainable() const { return impl_->trainable; }
  void set_trainable(bool on) { impl_->trainable = on; }

  /// True for trainable leaves and for every op output that depends on one.
  bool requires_grad() const { return impl_->trainable || impl_->derived_grad; }

  Tensor clone() const {
    Tensor t = from(impl_->shape, impl_->values);
    t.impl_->trainable = impl_->trainable;
    return t;
  }

  /// Same storage identity (not value equality).
  bool same(const Tensor& other) const { return impl_ == other.impl_; }

  bool all_finite() const {
    return std::all_of(impl_->values.begin(), impl_->values.end(),
                       [](Real v) { return std::isfinite(v); });
  }

 private:
  friend class Tape<Real>;

  struct Impl {
    Shape shape;
    std::vector<Real> values;
    std::vector<Real> grad;
    bool trainable = false;
    bool derived_grad = false;
  };

  static void validate(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor shape " + to_string(shape) + " has a zero extent");
    }
  }

  void mark_derived() const { impl_->derived_grad = true; }

  std::shared_ptr<Impl> impl_;
};

/// Copies values into a tensor of another scalar type.
template <class To, class From>
Tensor<To> tensor_cast(const Tensor<From>& src) {
  std::vector<To> values(src.values().begin(), src.values().end());
  Tensor<To> out = Tensor<To>::from(src.shape(), std::move(values));
  out.set_trainable(src.trainable());
  return out;
}

}  // namespace memotion
