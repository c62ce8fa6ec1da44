// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "memotion/errors.hpp"
#include "memotion/sample.hpp"

namespace memotion {

using Rational = boost::multiprecision::cpp_rational;

/// K x K counts, rows = gold class, columns = predicted class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes) : k_(classes), counts_(classes * classes, 0) {
    if (classes == 0) throw InputError("confusion matrix needs at least one class");
  }

  ConfusionMatrix(std::span<const int> gold, std::span<const int> pred, std::size_t classes)
      : ConfusionMatrix(classes) {
    if (gold.size() != pred.size())
      throw InputError("gold and predicted label counts differ: " + std::to_string(gold.size()) + " vs " +
                       std::to_string(pred.size()));
    for (std::size_t i = 0; i < gold.size(); ++i) add(gold[i], pred[i]);
  }

  void add(int gold, int pred) {
    if (gold < 0 || pred < 0 || static_cast<std::size_t>(gold) >= k_ || static_cast<std::size_t>(pred) >= k_)
      throw InputError("label outside [0, " + std::to_string(k_) + ")");
    ++counts_[static_cast<std::size_t>(gold) * k_ + static_cast<std::size_t>(pred)];
  }

  std::size_t classes() const { return k_; }
  std::uint64_t at(std::size_t gold, std::size_t pred) const { return counts_[gold * k_ + pred]; }

  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (auto c : counts_) n += c;
    return n;
  }

  std::uint64_t true_positives(std::size_t c) const { return at(c, c); }
  std::uint64_t false_positives(std::size_t c) const {
    std::uint64_t n = 0;
    for (std::size_t g = 0; g < k_; ++g)
      if (g != c) n += at(g, c);
    return n;
  }
  std::uint64_t false_negatives(std::size_t c) const {
    std::uint64_t n = 0;
    for (std::size_t p = 0; p < k_; ++p)
      if (p != c) n += at(c, p);
    return n;
  }

  /// F1 of class c as the exact fraction 2TP / (2TP + FP + FN), which equals
  /// 2PR / (P + R); 0 when the class never appears in gold or predictions.
  Rational f1_exact(std::size_t c) const {
    const auto tp = true_positives(c);
    const auto denom = 2 * tp + false_positives(c) + false_negatives(c);
    if (tp == 0 || denom == 0) return Rational(0);
    return Rational(2 * tp) / Rational(denom);
  }

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

/// Macro F1 as an exact rational: mean over all K classes of the per-class F1,
/// classes absent from both gold and predictions counting as 0.
inline Rational macro_f1_exact(std::span<const int> gold, std::span<const int> pred, std::size_t classes) {
  if (gold.empty()) throw InputError("macro_f1: empty input");
  ConfusionMatrix cm(gold, pred, classes);
  Rational sum(0);
  for (std::size_t c = 0; c < classes; ++c) sum += cm.f1_exact(c);
  return sum / Rational(classes);
}

inline double macro_f1(std::span<const int> gold, std::span<const int> pred, std::size_t classes) {
  return macro_f1_exact(gold, pred, classes).convert_to<double>();
}

/// Index of the largest entry; the first one wins ties.
template <class Real>
int argmax(std::span<const Real> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return static_cast<int>(best);
}

/// Per-task predicted fine labels.
using Predictions = std::vector<LabelSet>;

/// Macro F1 per task, in head order.
using TaskScores = std::array<double, kNumTasks>;

inline TaskScores per_task_macro_f1(std::span<const LabelSet> gold, std::span<const LabelSet> pred) {
  if (gold.size() != pred.size()) throw InputError("per_task_macro_f1: size mismatch");
  TaskScores scores{};
  std::vector<int> g(gold.size()), p(pred.size());
  for (Task t : kAllTasks) {
    for (std::size_t i = 0; i < gold.size(); ++i) {
      g[i] = gold[i][t];
      p[i] = pred[i][t];
    }
    scores[task_index(t)] = macro_f1(g, p, class_count(t));
  }
  return scores;
}

inline double mean_score(const TaskScores& s) {
  double acc = 0.0;
  for (double v : s) acc += v;
  return acc / static_cast<double>(s.size());
}

/// The three-number competition summary plus the per-category breakdown.
struct CompetitionReport {
  double subtask_a = 0.0;  // sentiment macro F1
  double subtask_b = 0.0;  // mean binary macro F1 over humor/sarcasm/offense/motivation
  double subtask_c = 0.0;  // mean fine-scale macro F1 over the same four
  TaskScores fine{};       // per-task macro F1 on fine labels
  TaskScores coarse{};     // per-task macro F1 after coarsening (sentiment unchanged)
};

/// A is sentiment; C averages the four semantic categories at full
/// granularity; B averages them after coarsening gold and predictions alike.
inline CompetitionReport competition_scores(std::span<const LabelSet> pred, std::span<const LabelSet> gold) {
  if (gold.empty()) throw InputError("competition_scores: empty input");
  CompetitionReport r;
  r.fine = per_task_macro_f1(gold, pred);
  std::vector<int> g(gold.size()), p(pred.size());
  for (Task t : kAllTasks) {
    for (std::size_t i = 0; i < gold.size(); ++i) {
      g[i] = coarsen(t, gold[i][t]);
      p[i] = coarsen(t, pred[i][t]);
    }
    const std::size_t k = t == Task::Sentiment ? class_count(t) : 2;
    r.coarse[task_index(t)] = macro_f1(g, p, k);
  }
  r.subtask_a = r.fine[task_index(Task::Sentiment)];
  for (Task t : {Task::Humor, Task::Sarcasm, Task::Offense, Task::Motivation}) {
    r.subtask_b += r.coarse[task_index(t)] / 4.0;
    r.subtask_c += r.fine[task_index(t)] / 4.0;
  }
  return r;
}

/// Machine-readable form: one `name<TAB>value` per line.
inline void write_key_values(std::ostream& os, const CompetitionReport& r) {
  auto emit = [&](const std::string& name, double v) {
    os << name << '\t' << std::setprecision(17) << v << '\n';
  };
  emit("subtask_a", r.subtask_a);
  emit("subtask_b", r.subtask_b);
  emit("subtask_c", r.subtask_c);
  for (Task t : kAllTasks) emit("fine." + std::string(task_name(t)), r.fine[task_index(t)]);
  for (Task t : kAllTasks) emit("coarse." + std::string(task_name(t)), r.coarse[task_index(t)]);
}

/// Human-readable table.
inline void write_table(std::ostream& os, const CompetitionReport& r) {
  os << std::fixed << std::setprecision(4);
  os << "Subtask A (sentiment)         " << r.subtask_a << '\n';
  os << "Subtask B (binary, mean of 4) " << r.subtask_b << '\n';
  os << "Subtask C (scales, mean of 4) " << r.subtask_c << '\n';
  os << "\ncategory      fine    coarse\n";
  for (Task t : kAllTasks) {
    os << std::left << std::setw(12) << task_name(t) << std::right << "  " << r.fine[task_index(t)] << "  "
       << r.coarse[task_index(t)] << '\n';
  }
  os.unsetf(std::ios::floatfield);
}

}  // namespace memotion
