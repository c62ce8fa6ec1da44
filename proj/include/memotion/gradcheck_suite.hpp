// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "memotion/gradcheck.hpp"
#include "memotion/loss.hpp"
#include "memotion/model.hpp"
#include "memotion/ops.hpp"
#include "memotion/rng.hpp"
#include "memotion/synthetic.hpp"
#include "memotion/tape.hpp"
#include "memotion/tensor.hpp"

// Gradient fidelity harness. Analytic gradients come from the float32
// reverse pass; the reference is a float64 central difference evaluated at
// exactly the same point (every float input is representable in double).
// Each op case reduces the op output with a random projection,
// L = sum(r * op(x)), so every output coordinate contributes.

namespace memotion {

inline constexpr double kGradTolerance = 1e-2;
inline constexpr double kNumericStep = 1e-6;

/// Per-coordinate relative error uses max(|a|, |n|, floor) as denominator,
/// where floor = max(kScaleFloor * max |n| over the tensor, kAbsFloor).
/// Entries far below the tensor's gradient scale are judged against that
/// scale, which is where float32 accumulation error lives. The absolute floor
/// covers gradients that are exactly zero in exact arithmetic (attention key
/// biases, layer norm over two features) and come out as rounding noise.
inline constexpr double kScaleFloor = 1e-3;
inline constexpr double kAbsFloor = 1e-6;

inline GradCheckResult compare_scaled(std::span<const double> analytic, std::span<const double> numeric,
                                      std::span<const std::size_t> coords) {
  double scale = 0.0;
  for (double v : numeric) scale = std::max(scale, std::fabs(v));
  const double floor = std::max(kScaleFloor * scale, kAbsFloor);
  GradCheckResult r;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), floor});
    const double e = std::fabs(analytic[i] - numeric[i]) / denom;
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

/// One differentiable op under test: an input generator (values are drawn in
/// double and rounded to float before use) and the op applied at either
/// precision. `checked` marks which inputs receive gradients.
struct OpCheck {
  std::string name;
  std::function<std::vector<Tensor<double>>(Rng&)> inputs;
  std::function<Tensor<float>(Tape<float>&, const std::vector<Tensor<float>>&)> apply_float;
  std::function<Tensor<double>(Tape<double>&, const std::vector<Tensor<double>>&)> apply_double;
  std::vector<bool> checked;  // empty: all inputs
};

template <class Gen, class Apply>
OpCheck make_op_check(std::string name, Gen gen, Apply apply, std::vector<bool> checked = {}) {
  return OpCheck{std::move(name), gen,
                 [apply](Tape<float>& t, const std::vector<Tensor<float>>& x) { return apply(t, x); },
                 [apply](Tape<double>& t, const std::vector<Tensor<double>>& x) { return apply(t, x); },
                 std::move(checked)};
}

struct OpReport {
  std::string name;
  std::size_t cases = 0;
  GradCheckResult worst;
  std::size_t worst_case = 0;
  std::size_t worst_input = 0;

  bool passed(double tol = kGradTolerance) const { return worst.max_rel_error < tol; }
};

/// Runs `cases` seeded cases of one op.
inline OpReport run_op_check(const OpCheck& check, std::size_t cases, std::uint64_t seed) {
  OpReport report{check.name, cases, {}, 0, 0};
  for (std::size_t c = 0; c < cases; ++c) {
    Rng rng(derive_seed(seed, c));
    auto raw = check.inputs(rng);
    std::vector<Tensor<float>> xf;
    std::vector<Tensor<double>> xd;
    for (const auto& t : raw) {
      xf.push_back(tensor_cast<float>(t));
      xd.push_back(tensor_cast<double>(xf.back()));
    }
    Tape<double> probe(false);
    const Shape out_shape = check.apply_double(probe, xd).shape();
    std::vector<double> r(numel(out_shape));
    for (auto& v : r) v = static_cast<double>(static_cast<float>(rng.normal()));
    const auto rf = Tensor<float>::from(out_shape, std::vector<float>(r.begin(), r.end()));

    auto is_checked = [&](std::size_t i) { return check.checked.empty() || check.checked[i]; };
    for (std::size_t i = 0; i < xf.size(); ++i) {
      xf[i].set_trainable(is_checked(i));
      xf[i].clear_grad();
    }
    {
      Tape<float> tape;
      auto y = check.apply_float(tape, xf);
      auto loss = ops::sum(tape, ops::mul(tape, y, rf));
      tape.backward(loss);
    }
    auto loss_d = [&] {
      Tape<double> quiet(false);
      auto y = check.apply_double(quiet, xd);
      double acc = 0.0;
      for (std::size_t k = 0; k < r.size(); ++k) acc += r[k] * y.data()[k];
      return acc;
    };
    for (std::size_t i = 0; i < xf.size(); ++i) {
      if (!is_checked(i)) continue;
      std::vector<std::size_t> coords(xf[i].size());
      std::iota(coords.begin(), coords.end(), 0);
      std::vector<double> analytic(xf[i].size(), 0.0);
      if (xf[i].has_grad())
        std::copy(xf[i].grad().begin(), xf[i].grad().end(), analytic.begin());
      const auto numeric = central_differences<double>(loss_d, xd[i].mutable_values(), kNumericStep, coords);
      const auto res = compare_scaled(analytic, numeric, coords);
      if (res.max_rel_error >= report.worst.max_rel_error || report.worst.checked == 0) {
        report.worst_case = c;
        report.worst_input = i;
      }
      report.worst.merge(res);
    }
  }
  return report;
}

namespace detail {

inline Tensor<double> random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  auto t = Tensor<double>::zeros(shape);
  for (auto& v : t.mutable_values()) v = scale * rng.normal();
  return t;
}

// Values bounded away from zero (kinks of relu-like ops).
inline Tensor<double> away_from_zero(Rng& rng, Shape shape, double gap = 0.05) {
  auto t = Tensor<double>::zeros(shape);
  for (auto& v : t.mutable_values()) {
    const double m = gap + std::fabs(rng.normal());
    v = rng.below(2) ? m : -m;
  }
  return t;
}

// Distinct values in shuffled order with a minimum spacing, so no max is tied.
inline Tensor<double> distinct_values(Rng& rng, Shape shape) {
  auto t = Tensor<double>::zeros(shape);
  auto v = t.mutable_values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.01 * static_cast<double>(i) - 0.005 * static_cast<double>(v.size());
  std::vector<double> copy(v.begin(), v.end());
  shuffle(copy, rng);
  std::copy(copy.begin(), copy.end(), v.begin());
  return t;
}

inline std::size_t dim_between(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

}  // namespace detail

/// The op list covered by the suite.
inline std::vector<OpCheck> standard_op_checks() {
  using detail::away_from_zero;
  using detail::dim_between;
  using detail::random_tensor;
  std::vector<OpCheck> checks;
  auto two = [](Rng& rng) {
    const Shape s{dim_between(rng, 1, 4), dim_between(rng, 1, 5)};
    return std::vector<Tensor<double>>{random_tensor(rng, s), random_tensor(rng, s)};
  };
  checks.push_back(make_op_check(
      "matmul",
      [](Rng& rng) {
        const auto m = dim_between(rng, 1, 5), k = dim_between(rng, 1, 9), n = dim_between(rng, 1, 6);
        return std::vector<Tensor<double>>{random_tensor(rng, {m, k}), random_tensor(rng, {k, n})};
      },
      [](auto& t, const auto& x) { return ops::matmul(t, x[0], x[1]); }));
  checks.push_back(make_op_check(
      "transpose", [](Rng& rng) { return std::vector<Tensor<double>>{random_tensor(rng, {dim_between(rng, 1, 4), dim_between(rng, 1, 5)})}; },
      [](auto& t, const auto& x) { return ops::transpose(t, x[0]); }));
  checks.push_back(make_op_check("add", two, [](auto& t, const auto& x) { return ops::add(t, x[0], x[1]); }));
  checks.push_back(make_op_check("mul", two, [](auto& t, const auto& x) { return ops::mul(t, x[0], x[1]); }));
  checks.push_back(make_op_check(
      "add_bias",
      [](Rng& rng) {
        const auto r = dim_between(rng, 1, 4), c = dim_between(rng, 1, 6);
        return std::vector<Tensor<double>>{random_tensor(rng, {r, c}), random_tensor(rng, {c})};
      },
      [](auto& t, const auto& x) { return ops::add_bias(t, x[0], x[1]); }));
  checks.push_back(make_op_check(
      "scale", [](Rng& rng) { return std::vector<Tensor<double>>{random_tensor(rng, {dim_between(rng, 1, 4), 3})}; },
      [](auto& t, const auto& x) {
        using R = typename std::decay_t<decltype(x[0])>::value_type;
        return ops::scale(t, x[0], R(-1.75));
      }));
  checks.push_back(make_op_check(
      "sum", [](Rng& rng) { return std::vector<Tensor<double>>{random_tensor(rng, {dim_between(rng, 1, 4), 5})}; },
      [](auto& t, const auto& x) { return ops::sum(t, x[0]); }));
  checks.push_back(make_op_check(
      "mean", [](Rng& rng) { return std::vector<Tensor<double>>{random_tensor(rng, {dim_between(rng, 1, 4), 5})}; },
      [](auto& t, const auto& x) { return ops::mean(t, x[0]); }));
  checks.push_back(make_op_check(
      "reshape", [](Rng& rng) { return std::vector<Tensor<double>>{random_tensor(rng, {2, dim_between(rng, 1, 3), 3})}; },
      [](auto& t, const auto& x) { return ops::reshape(t, x[0], Shape{x[0].size()}); }));
  checks.push_back(make_op_check(
      "relu", [](Rng& rng) { return std::vector<Tensor<double>>{away_from_zero(rng, {dim_between(rng, 1, 4), 6})}; },
      [](auto& t, const auto& x) { return ops::relu(t, x[0]); }));
  checks.push_back(make_op_check(
      "gelu", [](Rng& rng) { return std::vector<Tensor<double>>{random_tensor(rng, {dim_between(rng, 1, 4), 6}, 2.0)}; },
      [](auto& t, const auto& x) { return ops::gelu(t, x[0]); }));
  checks.push_back(make_op_check(
      "tanh", [](Rng& rng) { return std::vector<Tensor<double>>{random_tensor(rng, {dim_between(rng, 1, 4), 6}, 1.5)}; },
      [](auto& t, const auto& x) { return ops::tanh(t, x[0]); }));
  checks.push_back(make_op_check(
      "softmax",
      [](Rng& rng) { return std::vector<Tensor<double>>{random_tensor(rng, {dim_between(rng, 1, 4), dim_between(rng, 2, 6)}, 2.0)}; },
      [](auto& t, const auto& x) { return ops::softmax(t, x[0]); }));
  checks.push_back(make_op_check(
      "layer_norm",
      [](Rng& rng) {
        const auto r = dim_between(rng, 1, 4), c = dim_between(rng, 3, 8);
        auto gamma = random_tensor(rng, {c}, 0.5);
        for (auto& g : gamma.mutable_values()) g += 1.0;
        return std::vector<Tensor<double>>{random_tensor(rng, {r, c}), gamma, random_tensor(rng, {c}, 0.5)};
      },
      [](auto& t, const auto& x) { return ops::layer_norm(t, x[0], x[1], x[2]); }));
  checks.push_back(make_op_check(
      "dropout",
      [](Rng& rng) {
        auto mask_seed = Tensor<double>::scalar(static_cast<double>(rng.below(1u << 20)));
        return std::vector<Tensor<double>>{random_tensor(rng, {dim_between(rng, 1, 4), 8}), mask_seed};
      },
      [](auto& t, const auto& x) {
        Rng mask_rng(static_cast<std::uint64_t>(x[1].item()));
        return ops::dropout(t, x[0], 0.3, true, mask_rng);
      },
      {true, false}));
  checks.push_back(make_op_check(
      "concat",
      [](Rng& rng) {
        const auto r = dim_between(rng, 1, 3);
        return std::vector<Tensor<double>>{random_tensor(rng, {r, dim_between(rng, 1, 4)}),
                                           random_tensor(rng, {r, dim_between(rng, 1, 4)}),
                                           random_tensor(rng, {r, dim_between(rng, 1, 4)})};
      },
      [](auto& t, const auto& x) { return ops::concat(t, std::vector{x[0], x[1], x[2]}); }));
  checks.push_back(make_op_check(
      "narrow", [](Rng& rng) { return std::vector<Tensor<double>>{random_tensor(rng, {dim_between(rng, 1, 3), 7})}; },
      [](auto& t, const auto& x) { return ops::narrow(t, x[0], 2, 4); }));
  checks.push_back(make_op_check(
      "split", [](Rng& rng) { return std::vector<Tensor<double>>{random_tensor(rng, {dim_between(rng, 1, 3), 6})}; },
      [](auto& t, const auto& x) {
        auto [a, b] = ops::split(t, x[0], 2);
        return ops::concat(t, ops::scale(t, a, static_cast<typename std::decay_t<decltype(a)>::value_type>(3)), b);
      }));
  checks.push_back(make_op_check(
      "slice_rows", [](Rng& rng) { return std::vector<Tensor<double>>{random_tensor(rng, {5, dim_between(rng, 1, 4)})}; },
      [](auto& t, const auto& x) { return ops::slice_rows(t, x[0], 1, 3); }));
  checks.push_back(make_op_check(
      "stack",
      [](Rng& rng) {
        const auto c = dim_between(rng, 1, 5);
        return std::vector<Tensor<double>>{random_tensor(rng, {c}), random_tensor(rng, {c}), random_tensor(rng, {c})};
      },
      [](auto& t, const auto& x) { return ops::stack(t, std::vector{x[0], x[1], x[2]}); }));
  checks.push_back(make_op_check(
      "embedding_lookup",
      [](Rng& rng) {
        auto ids = Tensor<double>::zeros({6});
        for (auto& v : ids.mutable_values()) v = static_cast<double>(rng.below(5));
        return std::vector<Tensor<double>>{random_tensor(rng, {5, dim_between(rng, 1, 4)}), ids};
      },
      [](auto& t, const auto& x) {
        std::vector<std::int32_t> ids;
        for (auto v : x[1].values()) ids.push_back(static_cast<std::int32_t>(v));
        return ops::embedding_lookup(t, x[0], ids);
      },
      {true, false}));
  checks.push_back(make_op_check(
      "conv2d",
      [](Rng& rng) {
        const auto ci = dim_between(rng, 1, 3), co = dim_between(rng, 1, 3);
        const auto h = dim_between(rng, 1, 6), w = dim_between(rng, 1, 6);
        return std::vector<Tensor<double>>{random_tensor(rng, {ci, h, w}), random_tensor(rng, {co, ci, 3, 3}, 0.5),
                                           random_tensor(rng, {co}, 0.5)};
      },
      [](auto& t, const auto& x) { return ops::conv2d(t, x[0], x[1], x[2]); }));
  checks.push_back(make_op_check(
      "maxpool2d",
      [](Rng& rng) {
        return std::vector<Tensor<double>>{
            detail::distinct_values(rng, {dim_between(rng, 1, 3), 2 * dim_between(rng, 1, 3), 2 * dim_between(rng, 1, 3)})};
      },
      [](auto& t, const auto& x) { return ops::maxpool2d(t, x[0]); }));
  checks.push_back(make_op_check(
      "global_avg_pool",
      [](Rng& rng) {
        return std::vector<Tensor<double>>{random_tensor(rng, {dim_between(rng, 1, 4), dim_between(rng, 1, 4), dim_between(rng, 1, 4)})};
      },
      [](auto& t, const auto& x) { return ops::global_avg_pool(t, x[0]); }));
  checks.push_back(make_op_check(
      "cross_entropy",
      [](Rng& rng) {
        const auto n = dim_between(rng, 1, 4), k = dim_between(rng, 2, 4);
        auto p = Tensor<double>::zeros({n, k});
        for (auto& v : p.mutable_values()) v = rng.uniform(0.05, 1.0);
        auto labels = Tensor<double>::zeros({n});
        for (auto& v : labels.mutable_values()) v = static_cast<double>(rng.below(k));
        auto w = Tensor<double>::zeros({k});
        for (auto& v : w.mutable_values()) v = static_cast<double>(static_cast<float>(rng.uniform(0.1, 3.0)));
        return std::vector<Tensor<double>>{p, labels, w};
      },
      [](auto& t, const auto& x) {
        std::vector<int> y;
        for (auto v : x[1].values()) y.push_back(static_cast<int>(v));
        std::vector<double> w(x[2].values().begin(), x[2].values().end());
        return ops::weighted_cross_entropy(t, x[0], y, w);
      },
      {true, false, false}));
  return checks;
}

/// Deliberately wrong backward (tanh with derivative 1 - y instead of
/// 1 - y^2). Used to show the harness catches a broken op.
inline OpCheck faulty_op_check() {
  return make_op_check(
      "faulty_tanh",
      [](Rng& rng) { return std::vector<Tensor<double>>{detail::random_tensor(rng, {3, 4}, 1.5)}; },
      [](auto& tape, const auto& x) {
        using R = typename std::decay_t<decltype(x[0])>::value_type;
        const auto& in = x[0];
        auto out = Tensor<R>::zeros(in.shape());
        for (std::size_t i = 0; i < in.size(); ++i) out.mutable_data()[i] = std::tanh(in.data()[i]);
        tape.record("faulty_tanh", out, {in}, [in, out] {
          auto g = out.grad();
          auto gi = in.ensure_grad();
          for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[i] * (R(1) - out.data()[i]);
        });
        return out;
      });
}

/// Gives every all-zero parameter tensor (biases at init) small random
/// values. With zero biases a ReLU unit whose inputs are all dropped sits
/// exactly on its kink, where no finite difference is meaningful.
template <class Real>
void nudge_zero_parameters(const MemeModel<Real>& model, std::uint64_t seed, double scale = 0.05) {
  Rng rng(seed);
  for (const auto& p : model.parameters()) {
    auto t = p.tensor;
    const auto v = t.values();
    if (std::any_of(v.begin(), v.end(), [](Real x) { return x != Real(0); })) continue;
    for (auto& x : t.mutable_values()) x = static_cast<Real>(scale * rng.normal());
  }
}

/// Full-model check: float32 reverse pass of the summed five-head loss on a
/// batch (training mode, dropout masks replayed from `seed`) against float64
/// central differences of the same loss. `per_tensor` coordinates are
/// sampled from every parameter tensor (0 = all of them).
struct ModelGradReport {
  GradCheckResult worst;
  std::string worst_parameter;
  std::size_t tensors = 0;
};

inline ModelGradReport check_model_gradients(const MemeModel<float>& model, std::span<const MemeSample> batch,
                                             std::size_t per_tensor, std::uint64_t seed) {
  model.set_phase(Phase::Unfrozen);
  const auto twin = model.cast<double>();
  std::vector<LabelSet> labels;
  std::vector<const MemeSample*> ptrs;
  for (const auto& s : batch) {
    labels.push_back(s.labels);
    ptrs.push_back(&s);
  }
  ClassWeights weights = ClassWeights::uniform();
  Rng wr(derive_seed(seed, 99));
  for (auto& w : weights.per_task)
    for (auto& v : w) v = static_cast<double>(static_cast<float>(wr.uniform(0.5, 2.0)));

  model.parameters().zero_grad();
  {
    Tape<float> tape;
    Rng drop(seed);
    auto out = model.forward(tape, std::span<const MemeSample* const>(ptrs), true, drop);
    auto report = total_loss(tape, out, labels, weights);
    tape.backward(report.total);
  }
  auto loss_d = [&] {
    Tape<double> quiet(false);
    Rng drop(seed);
    auto out = twin.forward(quiet, std::span<const MemeSample* const>(ptrs), true, drop);
    return total_loss(quiet, out, labels, weights).total.item();
  };

  ModelGradReport rep;
  Rng pick(derive_seed(seed, 7));
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const auto& p = model.parameters()[i];
    const auto& q = twin.parameters()[i];
    std::vector<std::size_t> coords(p.tensor.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (per_tensor > 0 && coords.size() > per_tensor) {
      shuffle(coords, pick);
      coords.resize(per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    std::vector<double> analytic;
    for (auto c : coords) analytic.push_back(p.tensor.has_grad() ? static_cast<double>(p.tensor.grad()[c]) : 0.0);
    const auto numeric =
        central_differences<double>(loss_d, Tensor<double>(q.tensor).mutable_values(), kNumericStep, coords);
    const auto res = compare_scaled(analytic, numeric, coords);
    if (rep.tensors == 0 || res.max_rel_error > rep.worst.max_rel_error) rep.worst_parameter = p.name;
    rep.worst.merge(res);
    ++rep.tensors;
  }
  model.parameters().zero_grad();
  return rep;
}

}  // namespace memotion

namespace memotion {

struct GradSuiteReport {
  std::vector<OpReport> ops;
  ModelGradReport model;

  const OpReport& worst_op() const {
    return *std::max_element(ops.begin(), ops.end(), [](const OpReport& a, const OpReport& b) {
      return a.worst.max_rel_error < b.worst.max_rel_error;
    });
  }

  bool passed(double tol = kGradTolerance) const {
    for (const auto& op : ops)
      if (!op.passed(tol)) return false;
    return model.worst.max_rel_error < tol;
  }
};

/// Every op at `cases` seeded cases, then the model built from `config` on a
/// synthetic batch of two samples.
inline GradSuiteReport run_gradcheck_suite(const ModelConfig& config, std::size_t cases, std::uint64_t seed,
                                           std::size_t per_tensor, bool include_faulty = false) {
  GradSuiteReport rep;
  auto checks = standard_op_checks();
  if (include_faulty) checks.push_back(faulty_op_check());
  for (std::size_t i = 0; i < checks.size(); ++i)
    rep.ops.push_back(run_op_check(checks[i], cases, derive_seed(seed, 1000 + i)));

  SyntheticConfig sc;
  sc.resolution = config.image.input_resolution;
  sc.max_seq_len = config.text.max_seq_len;
  sc.vocab_size = config.text.vocab_size;
  auto data = generate_synthetic_dataset(10, derive_seed(seed, 1), sc);
  ModelConfig mc = config;
  // The synthetic vocabulary can come out smaller than requested; ids stay in range either way.
  const MemeModel<float> model(mc);
  nudge_zero_parameters(model, derive_seed(seed, 2));
  rep.model = check_model_gradients(model, std::span<const MemeSample>(data.samples).first(2), per_tensor, seed);
  return rep;
}

}  // namespace memotion
