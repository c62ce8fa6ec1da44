// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "memotion/checkpoint.hpp"
#include "memotion/errors.hpp"
#include "memotion/kv.hpp"
#include "memotion/loss.hpp"
#include "memotion/metrics.hpp"
#include "memotion/model.hpp"
#include "memotion/ops.hpp"
#include "memotion/optim.hpp"
#include "memotion/rng.hpp"
#include "memotion/sample.hpp"
#include "memotion/tape.hpp"

namespace memotion {

struct TrainConfig {
  double phase1_lr = 5e-4;
  double phase2_lr = 5e-5;
  std::size_t patience = 30;
  std::size_t batch_size = 16;
  std::size_t max_epochs_per_phase = 100;
  std::size_t phases = 2;  // 1 stops after the frozen phase
  double validation_fraction = 0.1;
  std::uint64_t seed = 42;
  bool class_weights = true;  // inverse-frequency weights from the training split
  OptimizerConfig optimizer;

  void validate() const {
    if (!(phase1_lr > 0.0) || !(phase2_lr > 0.0)) throw ConfigError("training: learning rates must be positive");
    if (patience < 1) throw ConfigError("training: patience must be at least 1");
    if (batch_size < 1) throw ConfigError("training: batch_size must be at least 1");
    if (max_epochs_per_phase < 1) throw ConfigError("training: max_epochs_per_phase must be at least 1");
    if (phases != 1 && phases != 2) throw ConfigError("training: phases must be 1 or 2");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
      throw ConfigError("training: validation_fraction must be in (0, 1)");
    optimizer.validate();
  }

  void read(kv::Reader& r) {
    r.get("phase1_lr", phase1_lr);
    r.get("phase2_lr", phase2_lr);
    r.get("patience", patience);
    r.get("batch_size", batch_size);
    r.get("max_epochs_per_phase", max_epochs_per_phase);
    r.get("phases", phases);
    r.get("validation_fraction", validation_fraction);
    r.get("seed", seed);
    r.get("class_weights", class_weights);
  }

  kv::Map to_kv() const {
    return {{"phase1_lr", kv::format(phase1_lr)},
            {"phase2_lr", kv::format(phase2_lr)},
            {"patience", kv::format(patience)},
            {"batch_size", kv::format(batch_size)},
            {"max_epochs_per_phase", kv::format(max_epochs_per_phase)},
            {"phases", kv::format(phases)},
            {"validation_fraction", kv::format(validation_fraction)},
            {"seed", kv::format(seed)},
            {"class_weights", kv::format(class_weights)}};
  }
};

inline std::string_view phase_name(Phase p) { return p == Phase::Frozen ? "frozen" : "unfrozen"; }

inline Phase parse_phase(std::string_view s) {
  if (s == "frozen") return Phase::Frozen;
  if (s == "unfrozen") return Phase::Unfrozen;
  throw CheckpointError("unknown phase '" + std::string(s) + "'");
}

/// Indices of a deterministic random split: round(fraction * N) validation
/// samples, the rest for training, each list in ascending order.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double fraction,
                                                                                 std::uint64_t seed) {
  if (n < 10) throw InputError("split: need at least 10 samples, got " + std::to_string(n));
  if (!(fraction > 0.0 && fraction < 1.0)) throw InputError("split: fraction must be in (0, 1)");
  const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (n_val == 0 || n_val >= n) throw InputError("split: fraction leaves an empty side");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 10));
  shuffle(order, rng);
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {std::move(train), std::move(val)};
}

template <class T>
std::pair<std::vector<T>, std::vector<T>> split_train_validation(std::span<const T> samples, double fraction,
                                                                 std::uint64_t seed) {
  auto [ti, vi] = split_indices(samples.size(), fraction, seed);
  std::pair<std::vector<T>, std::vector<T>> out;
  for (auto i : ti) out.first.push_back(samples[i]);
  for (auto i : vi) out.second.push_back(samples[i]);
  return out;
}

/// Patience counter. An epoch improves only when its metric is strictly
/// greater than the best so far; training stops once `patience` epochs in a
/// row failed to improve.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience, double best = -std::numeric_limits<double>::infinity(),
                         std::size_t since = 0)
      : patience_(patience), best_(best), since_(since) {
    if (patience_ < 1) throw ConfigError("early stopping: patience must be at least 1");
  }

  /// Records one epoch; returns true if it improved.
  bool update(double metric) {
    if (should_stop()) throw ContractError("early stopping: update after patience was exhausted");
    if (metric > best_) {
      best_ = metric;
      since_ = 0;
      return true;
    }
    ++since_;
    return false;
  }

  bool should_stop() const { return since_ >= patience_; }
  double best() const { return best_; }
  std::size_t epochs_since_improvement() const { return since_; }

 private:
  std::size_t patience_;
  double best_;
  std::size_t since_;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based across both phases
  Phase phase = Phase::Frozen;
  double lr = 0.0;        // learning rate of the epoch's last step
  std::array<double, kNumTasks> train_loss{};
  TaskScores val_f1{};
  double monitored = 0.0;

  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

/// Tab-separated: epoch, phase, lr, five train losses, five validation macro
/// F1, monitored metric. Numbers use the shortest round-trip form.
inline std::string format_log_line(const EpochLog& e) {
  std::string s = std::to_string(e.epoch) + "\t" + std::string(phase_name(e.phase)) + "\t" + kv::format(e.lr);
  for (double v : e.train_loss) s += "\t" + kv::format(v);
  for (double v : e.val_f1) s += "\t" + kv::format(v);
  s += "\t" + kv::format(e.monitored);
  return s;
}

inline std::string log_header() {
  std::string s = "epoch\tphase\tlr";
  for (Task t : kAllTasks) s += "\tloss." + std::string(task_name(t));
  for (Task t : kAllTasks) s += "\tval_f1." + std::string(task_name(t));
  return s + "\tmonitored";
}

inline EpochLog parse_log_line(const std::string& line) {
  std::vector<std::string> f;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    f.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  if (f.size() != 3 + 2 * kNumTasks + 1) throw CheckpointError("malformed training log line");
  EpochLog e;
  try {
    e.epoch = kv::parse<std::size_t>("epoch", f[0]);
    e.phase = parse_phase(f[1]);
    e.lr = kv::parse<double>("lr", f[2]);
    for (std::size_t k = 0; k < kNumTasks; ++k) {
      e.train_loss[k] = kv::parse<double>("loss", f[3 + k]);
      e.val_f1[k] = kv::parse<double>("f1", f[3 + kNumTasks + k]);
    }
    e.monitored = kv::parse<double>("monitored", f.back());
  } catch (const ConfigError& err) {
    throw CheckpointError(std::string("training log: ") + err.what());
  }
  return e;
}

/// Everything needed to continue training exactly where it stopped.
template <class Real>
struct TrainState {
  Phase phase = Phase::Frozen;
  bool phase_finished = false;
  std::size_t epoch = 0;           // completed epochs over both phases
  std::size_t epoch_in_phase = 0;  // completed epochs in the current phase
  std::size_t global_step = 0;
  std::size_t phase_step = 0;
  double best_metric = -std::numeric_limits<double>::infinity();
  std::size_t epochs_since_improvement = 0;
  std::size_t best_epoch = 0;
  OptimizerState<Real> optimizer;
  Rng::State rng{};
  std::vector<std::vector<Real>> best_params;
  std::vector<EpochLog> log;

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

/// Per-head predictions, macro F1 and accuracy.
struct EvalResult {
  std::vector<LabelSet> predictions;
  TaskScores macro_f1{};
  TaskScores accuracy{};
  double mean_f1 = 0.0;
};

inline constexpr std::size_t kEvalBatch = 64;

/// Encoder features of each sample, computed without recording.
template <class Real>
std::vector<Tensor<Real>> encode_all(const MemeModel<Real>& model, std::span<const MemeSample> samples) {
  Tape<Real> tape(false);
  std::vector<Tensor<Real>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(model.encode(tape, s, false));
  return out;
}

/// Argmax of every head for every row of a feature list, in eval mode.
template <class Real>
std::vector<LabelSet> predict_from_features(const MemeModel<Real>& model, const std::vector<Tensor<Real>>& features) {
  Tape<Real> tape(false);
  Rng unused(0);
  std::vector<LabelSet> preds;
  preds.reserve(features.size());
  for (std::size_t b = 0; b < features.size(); b += kEvalBatch) {
    const std::size_t n = std::min(kEvalBatch, features.size() - b);
    std::vector<Tensor<Real>> rows(features.begin() + static_cast<std::ptrdiff_t>(b),
                                   features.begin() + static_cast<std::ptrdiff_t>(b + n));
    const auto out = model.forward_features(tape, ops::stack(tape, rows), false, unused);
    for (std::size_t i = 0; i < n; ++i) {
      LabelSet l;
      for (Task t : kAllTasks) {
        const std::size_t k = class_count(t);
        l[t] = argmax<Real>(out[t].values().subspan(i * k, k));
      }
      preds.push_back(l);
    }
  }
  return preds;
}

template <class Real>
std::vector<LabelSet> predict(const MemeModel<Real>& model, std::span<const MemeSample> samples) {
  return predict_from_features(model, encode_all(model, samples));
}

inline EvalResult score_predictions(std::vector<LabelSet> predictions, std::span<const LabelSet> gold) {
  if (gold.empty()) throw InputError("evaluation: empty dataset");
  EvalResult r;
  r.predictions = std::move(predictions);
  r.macro_f1 = per_task_macro_f1(gold, r.predictions);
  for (Task t : kAllTasks) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) hit += gold[i][t] == r.predictions[i][t];
    r.accuracy[task_index(t)] = static_cast<double>(hit) / static_cast<double>(gold.size());
  }
  r.mean_f1 = mean_score(r.macro_f1);
  return r;
}

inline std::vector<LabelSet> gold_labels(std::span<const MemeSample> samples) {
  std::vector<LabelSet> g;
  g.reserve(samples.size());
  for (const auto& s : samples) g.push_back(s.labels);
  return g;
}

/// Argmax decoding of every head and per-head macro F1 over a dataset.
template <class Real>
EvalResult evaluate_model(const MemeModel<Real>& model, std::span<const MemeSample> samples) {
  const auto gold = gold_labels(samples);
  return score_predictions(predict(model, samples), gold);
}

template <class Real>
struct TrainHooks {
  std::function<void(const EpochLog&)> on_log;
  std::function<void(const TrainState<Real>&)> on_epoch_end;
};

template <class Real>
struct TrainResult {
  std::vector<EpochLog> log;
  double best_metric = 0.0;
  std::size_t best_epoch = 0;
  TrainState<Real> state;
};

/// Number of optimizer steps per epoch for n training samples.
inline std::size_t steps_per_epoch(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

namespace detail {

template <class Real>
void begin_phase(const MemeModel<Real>& model, TrainState<Real>& st, Phase phase) {
  st.phase = phase;
  st.phase_finished = false;
  st.epoch_in_phase = 0;
  st.phase_step = 0;
  st.epochs_since_improvement = 0;
  st.optimizer = OptimizerState<Real>::zeros_like(model.parameters());
  model.set_phase(phase);
}

}  // namespace detail

/// Frozen phase at phase1_lr, reload of the best parameters, then the
/// unfrozen phase at phase2_lr. Each phase runs until its patience counter
/// runs out or max_epochs_per_phase; the best validation metric carries over
/// from phase 1 into phase 2. On return the model holds the parameters of the
/// best epoch of either phase.
///
/// With `resume`, training continues from that state; the model must hold
/// the parameters saved with it.
template <class Real>
TrainResult<Real> train_two_phase(const MemeModel<Real>& model, std::span<const MemeSample> train,
                                  std::span<const MemeSample> validation, const TrainConfig& config,
                                  const TrainHooks<Real>& hooks = {},
                                  std::optional<TrainState<Real>> resume = std::nullopt) {
  config.validate();
  if (train.empty()) throw InputError("training: empty training split");
  if (validation.empty()) throw InputError("training: empty validation split");

  const auto train_gold = gold_labels(train);
  const auto val_gold = gold_labels(validation);
  const ClassWeights weights =
      config.class_weights ? compute_class_weights(label_histograms(train_gold)) : ClassWeights::uniform();
  const std::size_t per_epoch = steps_per_epoch(train.size(), config.batch_size);
  const std::size_t total_steps = per_epoch * config.max_epochs_per_phase;

  TrainState<Real> st;
  if (resume) {
    st = std::move(*resume);
    if (st.optimizer.m.size() != model.parameters().size())
      throw CheckpointError("resume state does not match the model's parameters");
    model.set_phase(st.phase);
  } else {
    st.rng = Rng(derive_seed(config.seed, 20)).state();
    detail::begin_phase(model, st, Phase::Frozen);
  }
  Rng rng(0);
  rng.set_state(st.rng);

  std::vector<Tensor<Real>> train_feats, val_feats;
  Phase cached_for = Phase::Unfrozen;
  auto refresh_cache = [&] {
    if (st.phase == Phase::Frozen && cached_for != Phase::Frozen) {
      train_feats = encode_all(model, train);
      val_feats = encode_all(model, validation);
      cached_for = Phase::Frozen;
    } else if (st.phase == Phase::Unfrozen) {
      train_feats.clear();
      val_feats.clear();
      cached_for = Phase::Unfrozen;
    }
  };

  while (true) {
    if (st.phase_finished) {
      if (st.phase == Phase::Unfrozen || config.phases == 1) break;
      if (!st.best_params.empty()) model.parameters().restore(st.best_params);
      detail::begin_phase(model, st, Phase::Unfrozen);
    }
    refresh_cache();
    const bool frozen = st.phase == Phase::Frozen;
    OptimizerConfig opt = config.optimizer;
    opt.peak_lr = frozen ? config.phase1_lr : config.phase2_lr;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);

    EpochLog entry;
    entry.epoch = st.epoch + 1;
    entry.phase = st.phase;
    std::array<double, kNumTasks> loss_sum{};
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t begin = b * config.batch_size;
      const std::size_t n = std::min(config.batch_size, train.size() - begin);
      std::vector<LabelSet> labels;
      const double lr = lr_at_step(st.phase_step, total_steps, opt);
      Tape<Real> tape;
      model.parameters().zero_grad();
      HeadOutputs<Real> out;
      if (frozen) {
        std::vector<Tensor<Real>> rows;
        for (std::size_t i = 0; i < n; ++i) {
          rows.push_back(train_feats[order[begin + i]]);
          labels.push_back(train_gold[order[begin + i]]);
        }
        out = model.forward_features(tape, ops::stack(tape, rows), true, rng);
      } else {
        std::vector<const MemeSample*> batch;
        for (std::size_t i = 0; i < n; ++i) {
          batch.push_back(&train[order[begin + i]]);
          labels.push_back(train_gold[order[begin + i]]);
        }
        out = model.forward(tape, std::span<const MemeSample* const>(batch), true, rng);
      }
      const auto report = total_loss(tape, out, labels, weights);
      for (Task t : kAllTasks) {
        const double v = report.value(t);
        if (!std::isfinite(v))
          throw NumericalError("non-finite loss in the " + std::string(task_name(t)) + " head at epoch " +
                               std::to_string(entry.epoch) + ", batch " + std::to_string(b + 1) + " (" +
                               std::string(phase_name(st.phase)) + " phase)");
        loss_sum[task_index(t)] += v * static_cast<double>(n);
      }
      tape.backward(report.total);
      optimizer_step(model.parameters(), st.optimizer, lr, opt);
      entry.lr = lr;
      ++st.phase_step;
      ++st.global_step;
    }
    for (std::size_t k = 0; k < kNumTasks; ++k) entry.train_loss[k] = loss_sum[k] / static_cast<double>(train.size());

    const auto val_pred = frozen ? predict_from_features(model, val_feats) : predict(model, validation);
    const auto eval = score_predictions(val_pred, val_gold);
    entry.val_f1 = eval.macro_f1;
    entry.monitored = eval.mean_f1;

    EarlyStopping stopper(config.patience, st.best_metric, st.epochs_since_improvement);
    if (stopper.update(entry.monitored)) {
      st.best_params = model.parameters().snapshot();
      st.best_epoch = entry.epoch;
    }
    st.best_metric = stopper.best();
    st.epochs_since_improvement = stopper.epochs_since_improvement();
    ++st.epoch;
    ++st.epoch_in_phase;
    if (stopper.should_stop() || st.epoch_in_phase == config.max_epochs_per_phase) st.phase_finished = true;
    st.rng = rng.state();
    st.log.push_back(entry);
    if (hooks.on_log) hooks.on_log(entry);
    if (hooks.on_epoch_end) hooks.on_epoch_end(st);
  }

  if (!st.best_params.empty()) model.parameters().restore(st.best_params);
  TrainResult<Real> result;
  result.log = st.log;
  result.best_metric = st.best_metric;
  result.best_epoch = st.best_epoch;
  result.state = std::move(st);
  return result;
}

/// Model parameters plus the training state (optimizer moments, best
/// snapshot, RNG, counters and the log so far).
template <class Real>
Checkpoint training_checkpoint(const MemeModel<Real>& model, const TrainState<Real>& st, const TrainConfig& config) {
  Checkpoint ck = model_checkpoint(model);
  for (const auto& [k, v] : config.to_kv()) ck.meta["train." + k] = v;
  for (const auto& [k, v] : config.optimizer.to_kv()) ck.meta["optimizer." + k] = v;
  ck.meta["state.phase"] = std::string(phase_name(st.phase));
  ck.meta["state.phase_finished"] = kv::format(st.phase_finished);
  ck.meta["state.epoch"] = kv::format(st.epoch);
  ck.meta["state.epoch_in_phase"] = kv::format(st.epoch_in_phase);
  ck.meta["state.global_step"] = kv::format(st.global_step);
  ck.meta["state.phase_step"] = kv::format(st.phase_step);
  ck.meta["state.best_metric"] = kv::format(st.best_metric);
  ck.meta["state.epochs_since_improvement"] = kv::format(st.epochs_since_improvement);
  ck.meta["state.best_epoch"] = kv::format(st.best_epoch);
  ck.meta["state.optimizer_step"] = kv::format(st.optimizer.step);
  ck.meta["state.rng"] = kv::format_list(st.rng);
  ck.meta["state.log_entries"] = kv::format(st.log.size());
  for (std::size_t i = 0; i < st.log.size(); ++i) ck.meta["log." + std::to_string(i)] = format_log_line(st.log[i]);
  const auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    ck.add<Real>("opt.m/" + p.name, p.tensor.shape(), st.optimizer.m[i]);
    ck.add<Real>("opt.v/" + p.name, p.tensor.shape(), st.optimizer.v[i]);
    if (!st.best_params.empty()) ck.add<Real>("best/" + p.name, p.tensor.shape(), st.best_params[i]);
  }
  return ck;
}

/// Reads the training state written by training_checkpoint for `model`.
template <class Real>
TrainState<Real> load_train_state(const Checkpoint& ck, const MemeModel<Real>& model) {
  TrainState<Real> st;
  auto get = [&](const std::string& key, auto& target) {
    using T = std::remove_reference_t<decltype(target)>;
    try {
      target = kv::parse<T>(key, ck.meta_at(key));
    } catch (const ConfigError& e) {
      throw CheckpointError(e.what());
    }
  };
  st.phase = parse_phase(ck.meta_at("state.phase"));
  get("state.phase_finished", st.phase_finished);
  get("state.epoch", st.epoch);
  get("state.epoch_in_phase", st.epoch_in_phase);
  get("state.global_step", st.global_step);
  get("state.phase_step", st.phase_step);
  get("state.best_metric", st.best_metric);
  get("state.epochs_since_improvement", st.epochs_since_improvement);
  get("state.best_epoch", st.best_epoch);
  get("state.optimizer_step", st.optimizer.step);
  try {
    st.rng = kv::parse_list<std::uint64_t, 4>("state.rng", ck.meta_at("state.rng"));
  } catch (const ConfigError& e) {
    throw CheckpointError(e.what());
  }
  std::size_t entries = 0;
  get("state.log_entries", entries);
  for (std::size_t i = 0; i < entries; ++i) st.log.push_back(parse_log_line(ck.meta_at("log." + std::to_string(i))));
  auto read = [&](const std::string& name, const NamedParameter<Real>& p) {
    const auto& t = ck.at(name);
    if (t.shape != p.tensor.shape())
      throw CheckpointError(name + ": checkpoint shape " + to_string(t.shape) + ", model shape " +
                            to_string(p.tensor.shape()));
    return std::vector<Real>(t.values.begin(), t.values.end());
  };
  const bool has_best = ck.find("best/" + model.parameters()[0].name) != nullptr;
  for (const auto& p : model.parameters()) {
    st.optimizer.m.push_back(read("opt.m/" + p.name, p));
    st.optimizer.v.push_back(read("opt.v/" + p.name, p));
    if (has_best) st.best_params.push_back(read("best/" + p.name, p));
  }
  return st;
}

inline TrainConfig checkpoint_train_config(const Checkpoint& ck) {
  kv::Map train, opt;
  for (const auto& [k, v] : ck.meta) {
    if (k.rfind("train.", 0) == 0) train[k.substr(6)] = v;
    if (k.rfind("optimizer.", 0) == 0) opt[k.substr(10)] = v;
  }
  TrainConfig c;
  try {
    kv::Reader tr(train);
    c.read(tr);
    tr.reject_unknown("checkpoint training config");
    kv::Reader orr(opt);
    c.optimizer.read(orr);
    orr.reject_unknown("checkpoint optimizer config");
    c.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(e.what());
  }
  return c;
}

}  // namespace memotion
