// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "memotion/gradcheck.hpp"
#include "memotion/ops.hpp"
#include "memotion/rng.hpp"
#include "memotion/tape.hpp"
#include "memotion/tensor.hpp"

namespace {

using namespace memotion;
using T = Tensor<float>;

T random_tensor(Shape s, Rng& rng) {
  auto t = T::zeros(std::move(s));
  for (auto& v : t.mutable_values()) v = static_cast<float>(rng.normal());
  return t;
}

std::vector<float> vals(const T& t) { return {t.values().begin(), t.values().end()}; }

TEST(Tensor, ShapeInvariants) {
  EXPECT_THROW(T::from({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(T::zeros({2, 0}), ShapeError);
  EXPECT_THROW(T::zeros({}), ShapeError);
  auto t = T::zeros({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_FALSE(t.has_grad());
  EXPECT_EQ(t.ensure_grad().size(), t.size());
}

TEST(Matmul, IdentityAndRowSum) {
  Tape<float> tape;
  auto eye = T::from({2, 2}, {1, 0, 0, 1});
  auto m = T::from({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(vals(ops::matmul(tape, eye, m)), vals(m));
  auto row = T::from({1, 3}, {1, 2, 3});
  auto ones = T::from({3, 1}, {1, 1, 1});
  EXPECT_EQ(vals(ops::matmul(tape, row, ones)), std::vector<float>{6});
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t m = 1 + rng.below(7), k = 1 + rng.below(19), n = 1 + rng.below(7);
    auto a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
    Tape<float> tape;
    auto c = ops::matmul(tape, a, b);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0;
        for (std::size_t p = 0; p < k; ++p) acc += double(a.data()[i * k + p]) * b.data()[p * n + j];
        EXPECT_NEAR(c.data()[i * n + j], acc, 1e-5 * (1 + std::fabs(acc)));
      }
  }
}

TEST(Matmul, MismatchNamesBothShapes) {
  Tape<float> tape;
  try {
    ops::matmul(tape, T::zeros({2, 3}), T::zeros({4, 5}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

TEST(Conv2d, ZeroInputAndDeltaKernel) {
  Rng rng(1);
  Tape<float> tape;
  auto k = random_tensor({2, 1, 3, 3}, rng);
  auto y = ops::conv2d(tape, T::zeros({1, 4, 4}), k, T::zeros({2}));
  for (float v : y.values()) EXPECT_EQ(v, 0.0f);

  auto x = random_tensor({1, 3, 3}, rng);
  auto delta = T::zeros({1, 1, 3, 3});
  delta.mutable_data()[4] = 1;
  EXPECT_EQ(vals(ops::conv2d(tape, x, delta, T::zeros({1}))), vals(x));
}

TEST(Conv2d, MatchesNaiveLoops) {
  Rng rng(5);
  auto x = random_tensor({2, 4, 4}, rng), k = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
  Tape<float> tape;
  auto y = ops::conv2d(tape, x, k, b);
  ASSERT_EQ(y.shape(), (Shape{3, 4, 4}));
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        double acc = b.data()[o];
        for (int c = 0; c < 2; ++c)
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj) {
              const int yi = i + di, xj = j + dj;
              if (yi < 0 || yi >= 4 || xj < 0 || xj >= 4) continue;
              acc += double(x.data()[(c * 4 + yi) * 4 + xj]) * k.data()[((o * 2 + c) * 3 + di + 1) * 3 + dj + 1];
            }
        EXPECT_NEAR(y.data()[(o * 4 + i) * 4 + j], acc, 1e-5);
      }
  Tape<float> t2;
  EXPECT_THROW(ops::conv2d(t2, x, random_tensor({3, 1, 3, 3}, rng), b), ShapeError);
}

TEST(MaxPool, WindowTiesAndScan) {
  Tape<float> tape;
  auto one = T::from({1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(vals(ops::maxpool2d(tape, one)), std::vector<float>{4});

  auto c = T::full({1, 4, 4}, 2.5f);
  c.set_trainable(true);
  auto y = ops::maxpool2d(tape, c);
  for (float v : y.values()) EXPECT_EQ(v, 2.5f);
  tape.backward(ops::sum(tape, y));
  const std::vector<float> expect{1, 0, 1, 0, 0, 0, 0, 0, 1, 0, 1, 0, 0, 0, 0, 0};
  EXPECT_EQ(std::vector<float>(c.grad().begin(), c.grad().end()), expect);

  Rng rng(2);
  auto x = random_tensor({1, 4, 4}, rng);
  Tape<float> t2;
  auto m = ops::maxpool2d(t2, x);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      float best = -1e30f;
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) best = std::max(best, x.data()[(2 * i + a) * 4 + 2 * j + b]);
      EXPECT_EQ(m.data()[i * 2 + j], best);
    }
  EXPECT_THROW(ops::maxpool2d(t2, T::zeros({1, 3, 4})), ShapeError);
}

TEST(GlobalAvgPool, ConstantsMeansAndOracle) {
  Tape<float> tape;
  EXPECT_EQ(ops::global_avg_pool(tape, T::full({1, 3, 3}, 7.0f)).item(), 7.0f);
  EXPECT_EQ(ops::global_avg_pool(tape, T::from({1, 2, 2}, {1, 2, 3, 4})).item(), 2.5f);
  Rng rng(4);
  auto x = random_tensor({3, 5, 5}, rng);
  auto y = ops::global_avg_pool(tape, x);
  for (int c = 0; c < 3; ++c) {
    double acc = 0;
    for (int i = 0; i < 25; ++i) acc += x.data()[c * 25 + i];
    EXPECT_NEAR(y.data()[c], acc / 25, 1e-6);
  }
}

TEST(Softmax, UniformStableAndOracle) {
  Tape<float> tape;
  const auto uniform = ops::softmax(tape, T::zeros({3}));
  for (float v : uniform.values()) EXPECT_FLOAT_EQ(v, 1.0f / 3);
  auto big = ops::softmax(tape, T::from({2}, {1000, 0}));
  EXPECT_FLOAT_EQ(big.data()[0], 1.0f);
  EXPECT_EQ(big.data()[1], 0.0f);
  Rng rng(8);
  for (int rep = 0; rep < 100; ++rep) {
    auto x = random_tensor({4}, rng);
    auto y = ops::softmax(tape, x);
    double z = 0, total = 0;
    for (float v : x.values()) z += std::exp(double(v));
    for (int i = 0; i < 4; ++i) {
      EXPECT_NEAR(y.data()[i], std::exp(double(x.data()[i])) / z, 1e-7);
      EXPECT_GE(y.data()[i], 0.0f);
      total += y.data()[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Dropout, IdentityCasesAndExpectation) {
  Rng rng(9);
  auto x = random_tensor({100, 100}, rng);
  Tape<float> tape;
  auto eval = ops::dropout(tape, x, 0.3, false, rng);
  EXPECT_EQ(vals(eval), vals(x));
  EXPECT_EQ(vals(ops::dropout(tape, x, 0.0, true, rng)), vals(x));

  auto pos = T::zeros({10000});
  for (auto& v : pos.mutable_values()) v = static_cast<float>(rng.uniform(0.5, 1.5));
  auto y = ops::dropout(tape, pos, 0.3, true, rng);
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    mx += pos.data()[i];
    my += y.data()[i];
  }
  EXPECT_NEAR(my / mx, 1.0, 0.05);
  EXPECT_THROW(ops::dropout(tape, x, 1.0, true, rng), ContractError);
}

TEST(Concat, SplitRecoversInputsBitwise) {
  Rng rng(10);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 5}, rng);
  Tape<float> tape;
  auto c = ops::concat(tape, a, b);
  ASSERT_EQ(c.shape(), (Shape{3, 9}));
  auto [a2, b2] = ops::split(tape, c, 4);
  EXPECT_EQ(vals(a2), vals(a));
  EXPECT_EQ(vals(b2), vals(b));
}

TEST(EmbeddingLookup, GathersAndScatters) {
  auto table = T::from({3, 2}, {0, 1, 10, 11, 20, 21});
  table.set_trainable(true);
  Tape<float> tape;
  const std::vector<std::int32_t> ids{2, 0, 2};
  auto y = ops::embedding_lookup(tape, table, ids);
  EXPECT_EQ(vals(y), (std::vector<float>{20, 21, 0, 1, 20, 21}));
  tape.backward(ops::sum(tape, y));
  EXPECT_EQ(std::vector<float>(table.grad().begin(), table.grad().end()), (std::vector<float>{1, 1, 0, 0, 2, 2}));
  const std::vector<std::int32_t> bad{3};
  EXPECT_THROW(ops::embedding_lookup(tape, table, bad), InputError);
}

TEST(Backward, LinearQuadraticAndAccumulation) {
  Rng rng(11);
  auto w = random_tensor({5}, rng);
  w.set_trainable(true);
  {
    Tape<float> tape;
    tape.backward(ops::sum(tape, w));
    for (float g : w.grad()) EXPECT_EQ(g, 1.0f);
  }
  w.clear_grad();
  {
    Tape<float> tape;
    tape.backward(ops::scale(tape, ops::sum(tape, ops::mul(tape, w, w)), 0.5f));
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_FLOAT_EQ(w.grad()[i], w.data()[i]);
  }
  auto x = T::from({1}, {3});
  x.set_trainable(true);
  Tape<float> tape;
  tape.backward(ops::add(tape, x, x));
  EXPECT_EQ(x.grad()[0], 2.0f);
}

TEST(Backward, ContractsAndReachability) {
  auto a = T::from({2}, {1, 2});
  auto unused = T::from({2}, {3, 4});
  a.set_trainable(true);
  unused.set_trainable(true);
  Tape<float> tape;
  auto y = ops::scale(tape, a, 2.0f);
  EXPECT_THROW(tape.backward(y), ContractError);
  auto other = ops::scale(tape, unused, 1.0f);
  tape.backward(ops::sum(tape, y));
  EXPECT_TRUE(a.has_grad());
  EXPECT_FALSE(unused.has_grad());
  EXPECT_FALSE(other.has_grad());
  Tape<float> fresh;
  EXPECT_THROW(fresh.backward(T::scalar(1)), ContractError);
}

TEST(Backward, TapeOrderIsTopological) {
  auto x = T::from({2}, {1, -2});
  x.set_trainable(true);
  Tape<float> tape;
  auto h = ops::tanh(tape, x);
  auto y = ops::sum(tape, ops::mul(tape, h, h));
  ASSERT_EQ(tape.size(), 3u);
  EXPECT_EQ(tape.op_name(0), "tanh");
  EXPECT_EQ(tape.op_name(1), "mul");
  EXPECT_EQ(tape.op_name(2), "sum");
  tape.backward(y);
  for (std::size_t i = 0; i < 2; ++i) {
    const double t = std::tanh(double(x.data()[i]));
    EXPECT_NEAR(x.grad()[i], 2 * t * (1 - t * t), 1e-6);
  }
}

TEST(FiniteDiff, IdentityIsExact) {
  // Dyadic values and step keep every difference exact in float.
  auto x = T::from({3}, {0.5f, -1.0f, 2.0f});
  const double err =
      finite_diff_check<float>([](Tape<float>& t, const T& v) { return ops::sum(t, v); }, x, 0.125).max_rel_error;
  EXPECT_EQ(err, 0.0);
  EXPECT_THROW(finite_diff_check<float>([](Tape<float>& t, const T& v) { return ops::sum(t, v); }, x, 0.0),
               ContractError);
}

TEST(FiniteDiff, SoftmaxCrossEntropyComposite) {
  Rng rng(12);
  for (int rep = 0; rep < 10; ++rep) {
    auto x = random_tensor({3, 4}, rng);
    const std::vector<int> labels{0, 3, 1};
    const std::vector<double> w{1.0, 2.0, 0.5, 1.5};
    const double err = finite_diff_check<float>(
                           [&](Tape<float>& t, const T& v) {
                             return ops::weighted_cross_entropy(t, ops::softmax(t, v), labels, w);
                           },
                           x, 1e-3)
                           .max_rel_error;
    EXPECT_LT(err, 1e-2);
  }
}

TEST(Ops, FiniteOutputsOnFiniteInputs) {
  Rng rng(13);
  auto x = random_tensor({4, 6}, rng);
  auto g = T::full({6}, 1.0f), b = T::zeros({6});
  x.set_trainable(true);
  Tape<float> tape;
  auto y = ops::layer_norm(tape, ops::gelu(tape, ops::relu(tape, x)), g, b);
  auto loss = ops::sum(tape, ops::softmax(tape, ops::tanh(tape, y)));
  tape.backward(loss);
  EXPECT_TRUE(y.all_finite());
  for (float v : x.grad()) EXPECT_TRUE(std::isfinite(v));
}

}  // namespace
