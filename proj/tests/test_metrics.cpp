// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <numeric>
#include <sstream>
#include <vector>

#include "memotion/metrics.hpp"
#include "memotion/rng.hpp"
#include "memotion/synthetic.hpp"
#include "memotion/train.hpp"

namespace {

using namespace memotion;

// Per-class precision and recall from raw counts, then 2PR/(P+R).
Rational oracle_macro_f1(const std::vector<int>& gold, const std::vector<int>& pred, int k) {
  Rational sum(0);
  for (int c = 0; c < k; ++c) {
    int tp = 0, predicted = 0, actual = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      tp += gold[i] == c && pred[i] == c;
      predicted += pred[i] == c;
      actual += gold[i] == c;
    }
    const Rational p = predicted ? Rational(tp, predicted) : Rational(0);
    const Rational r = actual ? Rational(tp, actual) : Rational(0);
    if (p + r != 0) sum += 2 * p * r / (p + r);
  }
  return sum / k;
}

TEST(MacroF1, HandComputed) {
  const std::vector<int> gold{0, 0, 1, 1}, pred{0, 1, 0, 1};
  EXPECT_EQ(macro_f1(gold, pred, 2), 0.5);
  EXPECT_EQ(macro_f1(gold, gold, 2), 1.0);
  // Class 2 never occurs: counts as zero.
  EXPECT_EQ(macro_f1_exact(gold, gold, 3), Rational(2, 3));
}

TEST(MacroF1, AllOneClassOnBalancedGold) {
  const std::vector<int> gold{0, 1, 2, 3, 0, 1, 2, 3}, pred(8, 2);
  EXPECT_EQ(macro_f1_exact(gold, pred, 4), oracle_macro_f1(gold, pred, 4));
  EXPECT_EQ(macro_f1_exact(gold, pred, 4), Rational(1, 10));  // 2/(K(K+1))
}

// Every pair of 4-sample label vectors, K = 1..4.
TEST(MacroF1, ExhaustiveRationalOracle) {
  for (int k = 1; k <= 4; ++k) {
    const int n = k * k * k * k;
    std::size_t pairs = 0;
    for (int a = 0; a < n; ++a) {
      const std::vector<int> gold{a % k, a / k % k, a / (k * k) % k, a / (k * k * k)};
      for (int b = 0; b < n; ++b) {
        const std::vector<int> pred{b % k, b / k % k, b / (k * k) % k, b / (k * k * k)};
        ASSERT_EQ(macro_f1_exact(gold, pred, static_cast<std::size_t>(k)), oracle_macro_f1(gold, pred, k))
            << "k=" << k << " a=" << a << " b=" << b;
        ++pairs;
      }
    }
    EXPECT_EQ(pairs, static_cast<std::size_t>(n) * static_cast<std::size_t>(n));
  }
}

TEST(MacroF1, InvariantUnderSampleOrderAndRelabeling) {
  Rng rng(5);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t k = 2 + rng.below(3), n = 1 + rng.below(20);
    std::vector<int> gold(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      gold[i] = static_cast<int>(rng.below(k));
      pred[i] = static_cast<int>(rng.below(k));
    }
    const auto base = macro_f1_exact(gold, pred, k);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);
    std::vector<int> g2, p2;
    for (auto i : order) {
      g2.push_back(gold[i]);
      p2.push_back(pred[i]);
    }
    EXPECT_EQ(macro_f1_exact(g2, p2, k), base);
    std::vector<int> relabel(k);
    std::iota(relabel.begin(), relabel.end(), 0);
    shuffle(relabel, rng);
    for (auto& v : g2) v = relabel[static_cast<std::size_t>(v)];
    for (auto& v : p2) v = relabel[static_cast<std::size_t>(v)];
    EXPECT_EQ(macro_f1_exact(g2, p2, k), base);
  }
}

TEST(MacroF1, Errors) {
  const std::vector<int> empty, one{0}, two{0, 1};
  EXPECT_THROW(macro_f1(empty, empty, 2), InputError);
  EXPECT_THROW(macro_f1(one, two, 2), InputError);
  EXPECT_THROW(macro_f1(two, two, 1), InputError);
}

TEST(Argmax, FirstWinsTies) {
  const std::vector<double> v{0.2, 0.4, 0.4};
  EXPECT_EQ(argmax<double>(v), 1);
}

LabelSet labels(std::array<int, 5> v) {
  LabelSet l;
  l.values = v;
  return l;
}

std::vector<LabelSet> every_class(std::size_t n) {
  std::vector<LabelSet> g;
  for (int i = 0; i < static_cast<int>(n); ++i) g.push_back(labels({i % 3, i % 4, (i + 1) % 4, (i + 2) % 4, i % 2}));
  return g;
}

TEST(Competition, PerfectPredictions) {
  const auto gold = every_class(12);
  const auto r = competition_scores(gold, gold);
  EXPECT_EQ(r.subtask_a, 1.0);
  EXPECT_EQ(r.subtask_b, 1.0);
  EXPECT_EQ(r.subtask_c, 1.0);
}

// Order per row: sentiment, humor, sarcasm, offense, motivation.
TEST(Competition, CraftedEightSamplesAllZeroPredictions) {
  const std::vector<LabelSet> gold{labels({2, 0, 0, 0, 0}), labels({2, 1, 0, 1, 1}), labels({1, 2, 1, 0, 0}),
                                   labels({0, 3, 2, 0, 1}), labels({2, 0, 0, 2, 0}), labels({1, 1, 3, 0, 0}),
                                   labels({0, 0, 0, 3, 1}), labels({2, 2, 1, 0, 0})};
  const std::vector<LabelSet> pred(8);
  const auto r = competition_scores(pred, gold);
  // Only class 0 scores: F1_0 = 2*TP / (2*TP + FP) with TP = gold zeros.
  EXPECT_DOUBLE_EQ(r.subtask_a, (4.0 / 10) / 3);
  const double humor = (6.0 / 11) / 4, sarcasm = (8.0 / 12) / 4, offense = (10.0 / 13) / 4,
               motivation = (10.0 / 13) / 2;
  EXPECT_DOUBLE_EQ(r.subtask_c, (humor + sarcasm + offense + motivation) / 4);
  EXPECT_DOUBLE_EQ(r.subtask_b, ((6.0 / 11) / 2 + (8.0 / 12) / 2 + (10.0 / 13) / 2 + (10.0 / 13) / 2) / 4);
}

TEST(Competition, PreCoarsenedInputsScoreTheSame) {
  Rng rng(8);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<LabelSet> gold(12), pred(12);
    for (std::size_t i = 0; i < 12; ++i)
      for (Task t : kAllTasks) {
        gold[i][t] = static_cast<int>(rng.below(class_count(t)));
        pred[i][t] = static_cast<int>(rng.below(class_count(t)));
      }
    std::vector<LabelSet> cg, cp;
    for (std::size_t i = 0; i < 12; ++i) {
      cg.push_back(coarsen(gold[i]));
      cp.push_back(coarsen(pred[i]));
      EXPECT_EQ(coarsen(cg.back()), cg.back());
    }
    const auto a = competition_scores(pred, gold), b = competition_scores(cp, cg);
    EXPECT_EQ(a.subtask_b, b.subtask_b);
    EXPECT_EQ(a.coarse, b.coarse);
    EXPECT_EQ(a.subtask_a, b.subtask_a);
    for (double v : {a.subtask_a, a.subtask_b, a.subtask_c}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Competition, EmptyAndReports) {
  EXPECT_THROW(competition_scores({}, {}), InputError);
  const auto gold = every_class(4);
  const auto r = competition_scores(gold, gold);
  std::ostringstream kv, table;
  write_key_values(kv, r);
  write_table(table, r);
  EXPECT_EQ(kv.str().substr(0, 12), "subtask_a\t1\n");
  std::size_t lines = 0;
  for (char c : kv.str()) lines += c == '\n';
  EXPECT_EQ(lines, 13u);
  EXPECT_NE(table.str().find("Subtask C"), std::string::npos);
}

TEST(Evaluate, RepeatedEvaluationIsBitwiseIdentical) {
  SyntheticConfig sc;
  sc.resolution = 32;
  sc.max_seq_len = 16;
  const auto d = generate_synthetic_dataset(24, 1, sc);
  ModelConfig mc;
  mc.text.vocab_size = d.vocab.size();
  mc.text.max_seq_len = 16;
  mc.image.input_resolution = 32;
  const MemeModel<float> model(mc);
  const auto a = evaluate_model(model, std::span<const MemeSample>(d.samples));
  const auto b = evaluate_model(model, std::span<const MemeSample>(d.samples));
  EXPECT_EQ(a.macro_f1, b.macro_f1);
  EXPECT_EQ(a.predictions, b.predictions);
}

// Zero head biases and tiny head inputs give nearly uniform outputs, so one
// class dominates the argmax. Balanced gold then scores close to the
// all-one-class value 2 / (K (K + 1)).
TEST(Evaluate, UntrainedModelNearOneClassBaseline) {
  SyntheticConfig sc;
  sc.resolution = 32;
  sc.max_seq_len = 16;
  const auto d = generate_synthetic_dataset(96, 2, sc);
  ModelConfig mc;
  mc.text.vocab_size = d.vocab.size();
  mc.text.max_seq_len = 16;
  mc.image.input_resolution = 32;
  const MemeModel<float> model(mc);
  const auto r = evaluate_model(model, std::span<const MemeSample>(d.samples));
  for (Task t : {Task::Humor, Task::Sarcasm}) {  // exactly balanced in the generator
    const double k = static_cast<double>(class_count(t));
    EXPECT_NEAR(r.macro_f1[task_index(t)], 2 / (k * (k + 1)), 0.02) << task_name(t);
  }
}

}  // namespace
