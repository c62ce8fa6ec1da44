// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance checks. One PASS/FAIL line per criterion; exit 1 if any fails.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "memotion/checkpoint.hpp"
#include "memotion/gradcheck_suite.hpp"
#include "memotion/loss.hpp"
#include "memotion/metrics.hpp"
#include "memotion/records.hpp"
#include "memotion/synthetic.hpp"
#include "memotion/train.hpp"

namespace {

namespace fs = std::filesystem;
using namespace memotion;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

fs::path scratch_dir() {
  static const fs::path d = [] {
    auto p = fs::temp_directory_path() / ("memotion_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p;
  }();
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::vector<std::vector<float>> values_of(const MemeModel<float>& m, bool encoders) {
  std::vector<std::vector<float>> v;
  for (const auto& p : m.parameters())
    if ((p.group != ParamGroup::Heads) == encoders) v.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return v;
}

// Small corpus and model shared by the freeze and resume checks.
struct Small {
  std::vector<MemeSample> train, val;
  ModelConfig model;
  TrainConfig config;
};

Small small_setup() {
  SyntheticConfig sc;
  sc.resolution = 32;
  sc.max_seq_len = 16;
  const auto d = generate_synthetic_dataset(40, 11, sc);
  Small s;
  std::tie(s.train, s.val) = split_train_validation<MemeSample>(d.samples, 0.25, 3);
  s.model.text.vocab_size = d.vocab.size();
  s.model.text.max_seq_len = 16;
  s.model.text.num_layers = 2;
  s.model.image.input_resolution = 32;
  s.model.heads.hidden1 = 32;
  s.model.heads.hidden2 = 16;
  s.config.batch_size = 6;  // 30 training samples, 5 steps per epoch
  s.config.max_epochs_per_phase = 3;
  return s;
}

TrainResult<float> train_small(const Small& s, const MemeModel<float>& m, const TrainConfig& c,
                               const TrainHooks<float>& hooks = {},
                               std::optional<TrainState<float>> resume = std::nullopt) {
  return train_two_phase(m, std::span<const MemeSample>(s.train), std::span<const MemeSample>(s.val), c, hooks,
                         std::move(resume));
}

// 1. Finite differences over every op (100 cases each) and the fused desk model.
Outcome gradient_fidelity() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto rep = run_gradcheck_suite(ModelConfig{}, 100, 7, 16, false);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& op : rep.ops) {
    o.require(op.cases == 100, op.name + " ran " + std::to_string(op.cases) + " cases");
    o.require(op.passed(), op.name + " error " + fmt(op.worst.max_rel_error));
  }
  o.require(rep.model.worst.max_rel_error < kGradTolerance,
            "model " + rep.model.worst_parameter + " error " + fmt(rep.model.worst.max_rel_error));
  o.require(rep.model.tensors == MemeModel<float>(ModelConfig{}).parameters().size(), "not every model tensor checked");
  o.require(secs < 300, "took " + fmt(secs) + " s");
  if (o.pass)
    o.detail = std::to_string(rep.ops.size()) + " ops, worst op " + rep.worst_op().name + " " +
               fmt(rep.worst_op().worst.max_rel_error) + ", model " + fmt(rep.model.worst.max_rel_error) + ", " +
               fmt(secs) + " s";
  return o;
}

// 2. Full-scale construction.
Outcome structural_fidelity() {
  Outcome o;
  const auto c = ModelConfig::full_scale();
  const ImageEncoder<float> image(c.image, 1);
  o.require(image.pool_stages() == 5, "pool stages " + std::to_string(image.pool_stages()));
  o.require(image.output_dim() == 512, "image dim " + std::to_string(image.output_dim()));
  o.require(c.text.hidden_dim == 2048, "text dim " + std::to_string(c.text.hidden_dim));
  o.require(c.feature_dim() == 2560, "fused dim " + std::to_string(c.feature_dim()));
  const HeadBank<float> heads(c.feature_dim(), c.heads, 1);
  for (Task t : kAllTasks) {
    const auto s = heads.layer_shapes(t);
    using Shape = std::pair<std::size_t, std::size_t>;
    o.require(s.size() == 3 && s[0] == Shape{2560, 512} && s[1] == Shape{512, 256} &&
                  s[2] == Shape{256, class_count(t)},
              std::string("head stack ") + std::string(task_name(t)));
  }
  o.require(c.heads.head_dropout == 0.3, "head dropout " + fmt(c.heads.head_dropout));
  o.require(c.heads.feature_dropout == 0.1, "feature dropout " + fmt(c.heads.feature_dropout));
  if (o.pass) o.detail = "fused 512 + 2048 = 2560, heads 2560-512-256-k, 5 pool stages";
  return o;
}

// 3. Sharing makes the parameter count independent of depth.
Outcome cross_layer_sharing() {
  Outcome o;
  TextEncoderConfig a;
  a.num_layers = 2;
  TextEncoderConfig b = a;
  b.num_layers = 24;
  const auto na = TextEncoder<float>(a, 1).parameters().count(), nb = TextEncoder<float>(b, 1).parameters().count();
  o.require(na == nb, "L=2 " + std::to_string(na) + " vs L=24 " + std::to_string(nb));
  a.share_layers = b.share_layers = false;
  const auto ua = TextEncoder<float>(a, 1).parameters().count(), ub = TextEncoder<float>(b, 1).parameters().count();
  o.require(ua < ub, "unshared counts do not grow with depth");
  if (o.pass) o.detail = std::to_string(na) + " parameters at L=2 and L=24";
  return o;
}

// 4. Encoders fixed through phase 1, moving in phase 2.
Outcome freeze_contract() {
  Outcome o;
  const auto s = small_setup();
  const MemeModel<float> model(s.model);
  const auto initial = values_of(model, true), initial_heads = values_of(model, false);
  auto c = s.config;
  c.max_epochs_per_phase = 2;
  std::size_t frozen_steps = 0;
  bool saw_unfrozen = false;
  TrainHooks<float> hooks;
  hooks.on_epoch_end = [&](const TrainState<float>& st) {
    if (st.phase == Phase::Frozen) {
      frozen_steps = st.global_step;
      o.require(values_of(model, true) == initial, "encoder moved in phase 1 epoch " + std::to_string(st.epoch));
      o.require(values_of(model, false) != initial_heads, "heads did not move in phase 1");
    } else {
      saw_unfrozen = true;
      const auto now = values_of(model, true);
      for (std::size_t i = 0; i < now.size(); ++i)
        o.require(now[i] != initial[i], "encoder tensor " + std::to_string(i) + " unchanged in phase 2");
    }
  };
  train_small(s, model, c, hooks);
  o.require(frozen_steps >= 5, "only " + std::to_string(frozen_steps) + " frozen steps");
  o.require(saw_unfrozen, "phase 2 never ran");
  if (o.pass) o.detail = std::to_string(frozen_steps) + " frozen steps bitwise fixed";
  return o;
}

// 5. Warm-up probes, total 1000 steps.
Outcome schedule() {
  Outcome o;
  for (double peak : {5e-4, 5e-5}) {
    OptimizerConfig c;
    c.peak_lr = peak;
    const std::pair<std::size_t, double> probes[] = {
        {0, 0.0}, {25, peak / 4}, {50, peak / 2}, {100, peak}, {1000, peak}};
    for (auto [step, want] : probes) {
      const double got = lr_at_step(step, 1000, c);
      o.require(got == want, "peak " + fmt(peak) + " step " + std::to_string(step) + ": " + fmt(got));
    }
  }
  if (o.pass) o.detail = "10 probes exact";
  return o;
}

// 6. Weighted cross-entropy against a long double brute force.
Outcome loss_oracle() {
  Outcome o;
  Rng rng(1);
  double worst = 0;
  for (int c = 0; c < 1000; ++c) {
    const std::size_t k = 2 + rng.below(3), n = 1 + rng.below(8);
    std::vector<double> w(k), flat;
    for (auto& v : w) v = rng.uniform(0.1, 10.0);
    std::vector<int> y;
    long double want = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> p(k);
      double z = 0;
      for (auto& v : p) z += (v = std::exp(2.0 * rng.normal()));
      for (auto& v : p) v /= z;
      flat.insert(flat.end(), p.begin(), p.end());
      y.push_back(static_cast<int>(rng.below(k)));
      const auto yi = static_cast<std::size_t>(y.back());
      want += -static_cast<long double>(w[yi]) * std::log(std::max(static_cast<long double>(p[yi]), 1e-12L));
    }
    want /= static_cast<long double>(n);
    Tape<double> tape(false);
    const double got = ops::weighted_cross_entropy(tape, Tensor<double>::from({n, k}, flat), y, w).item();
    worst = std::max(worst, static_cast<double>(std::fabs(got - want)));
  }
  o.require(worst <= 1e-6, "max abs error " + fmt(worst));

  for (int c = 0; c < 200; ++c) {
    const std::size_t k = 4, n = 1 + rng.below(6);
    std::vector<double> flat;
    std::vector<int> y;
    double unweighted = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> p(k);
      double z = 0;
      for (auto& v : p) z += (v = std::exp(rng.normal()));
      for (auto& v : p) v /= z;
      flat.insert(flat.end(), p.begin(), p.end());
      y.push_back(static_cast<int>(rng.below(k)));
      unweighted += -std::log(std::max(p[static_cast<std::size_t>(y.back())], 1e-12));
    }
    Tape<double> tape(false);
    const double got =
        ops::weighted_cross_entropy(tape, Tensor<double>::from({n, k}, flat), y, std::vector<double>(k, 1.0)).item();
    o.require(got == unweighted / static_cast<double>(n), "unit weights differ at case " + std::to_string(c));
  }
  if (o.pass) o.detail = "1000 cases, max abs error " + fmt(worst) + "; unit weights exact";
  return o;
}

// 7. Exhaustive rational oracle over every 4-sample assignment, K = 1..4.
Outcome metric_oracle() {
  Outcome o;
  std::size_t pairs = 0;
  for (int k = 1; k <= 4; ++k) {
    const int n = k * k * k * k;
    for (int a = 0; a < n && o.pass; ++a) {
      const std::vector<int> gold{a % k, a / k % k, a / (k * k) % k, a / (k * k * k)};
      for (int b = 0; b < n; ++b) {
        const std::vector<int> pred{b % k, b / k % k, b / (k * k) % k, b / (k * k * k)};
        Rational want(0);
        for (int c = 0; c < k; ++c) {
          int tp = 0, predicted = 0, actual = 0;
          for (std::size_t i = 0; i < 4; ++i) {
            tp += gold[i] == c && pred[i] == c;
            predicted += pred[i] == c;
            actual += gold[i] == c;
          }
          const Rational p = predicted ? Rational(tp, predicted) : Rational(0);
          const Rational r = actual ? Rational(tp, actual) : Rational(0);
          if (p + r != 0) want += 2 * p * r / (p + r);
        }
        want /= k;
        if (macro_f1_exact(gold, pred, static_cast<std::size_t>(k)) != want) {
          o.require(false, "mismatch at K=" + std::to_string(k) + " gold " + std::to_string(a) + " pred " +
                               std::to_string(b));
          break;
        }
        ++pairs;
      }
    }
  }
  o.require(pairs == 1 + 256 + 6561 + 65536, "checked " + std::to_string(pairs) + " pairs");
  if (o.pass) o.detail = std::to_string(pairs) + " pairs exact";
  return o;
}

// 8. Phase-1 training fits the 200-sample corpus under both optimizers.
Outcome learning_sanity() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto ds = generate_synthetic_dataset(200, 5);
  const auto [tr, va] = split_train_validation<MemeSample>(ds.samples, 0.1, 1);
  const auto gold = gold_labels(tr);
  std::string summary;
  for (auto kind : {OptimizerKind::Lamb, OptimizerKind::AdamWeightDecay}) {
    ModelConfig mc;
    mc.text.vocab_size = ds.vocab.size();
    const MemeModel<float> model(mc);
    TrainConfig tc;
    tc.phases = 1;
    tc.max_epochs_per_phase = 50;
    tc.patience = 50;
    tc.optimizer.kind = kind;
    // Encoders are frozen in phase 1, so their features can be computed once.
    const auto features = encode_all(model, std::span<const MemeSample>(tr));
    std::size_t reached = 0;
    double best_min = 0;
    TrainHooks<float> hooks;
    hooks.on_log = [&](const EpochLog& e) {
      const auto acc = score_predictions(predict_from_features(model, features), gold).accuracy;
      const double lowest = *std::min_element(acc.begin(), acc.end());
      best_min = std::max(best_min, lowest);
      if (reached == 0 && lowest >= 0.95) reached = e.epoch;
    };
    train_two_phase(model, std::span<const MemeSample>(tr), std::span<const MemeSample>(va), tc, hooks);
    o.require(reached != 0, std::string(optimizer_name(kind)) + " best lowest-head accuracy " + fmt(best_min));
    if (!summary.empty()) summary += ", ";
    summary += std::string(optimizer_name(kind)) + " at epoch " + std::to_string(reached);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.require(secs < 600, "took " + fmt(secs) + " s");
  if (o.pass) o.detail = "every head >= 95%: " + summary + "; " + fmt(secs) + " s";
  return o;
}

// 9. Multimodal vs single-modality variants, mean over 3 seeds. Labels in the
// synthetic corpus need both modalities. Phase 1 only, 40 epochs.
Outcome modality_ordering() {
  Outcome o;
  const Variant variants[] = {Variant::Multimodal, Variant::Text, Variant::Image};
  double mean[3] = {0, 0, 0};
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto ds = generate_synthetic_dataset(300, 100 + seed);
    const auto [tr, va] = split_train_validation<MemeSample>(ds.samples, 0.2, seed);
    for (std::size_t v = 0; v < 3; ++v) {
      ModelConfig mc;
      mc.variant = variants[v];
      mc.seed = seed;
      mc.text.vocab_size = ds.vocab.size();
      const MemeModel<float> model(mc);
      TrainConfig tc;
      tc.phases = 1;
      tc.max_epochs_per_phase = 40;
      tc.patience = 10;
      tc.seed = seed;
      const auto r = train_two_phase(model, std::span<const MemeSample>(tr), std::span<const MemeSample>(va), tc, {});
      mean[v] += r.best_metric / 3;
    }
  }
  o.require(mean[0] >= mean[1] - 0.02, "multimodal " + fmt(mean[0]) + " < text " + fmt(mean[1]) + " - 0.02");
  o.require(mean[0] >= mean[2] - 0.02, "multimodal " + fmt(mean[0]) + " < image " + fmt(mean[2]) + " - 0.02");
  if (o.pass)
    o.detail = "mean validation macro F1: multimodal " + fmt(mean[0]) + ", text " + fmt(mean[1]) + ", image " +
               fmt(mean[2]);
  return o;
}

// 10. Records, checkpoints, corruption detection and resume.
Outcome serialization() {
  Outcome o;
  const auto dir = scratch_dir();
  auto d = generate_synthetic_dataset(12, 9);
  d.samples[3].image.pixels[7] = -0.0f;
  const auto rec = (dir / "a.mem").string(), rec2 = (dir / "b.mem").string();
  write_records(rec, d.samples);
  const auto back = read_records(rec);
  o.require(back == d.samples && std::signbit(back[3].image.pixels[7]), "records differ after reading");
  write_records(rec2, back);
  o.require(slurp(rec) == slurp(rec2), "record rewrite not bitwise");

  auto bytes = slurp(rec);
  bytes[bytes.size() / 2] ^= 0x08;
  std::ofstream(rec2, std::ios::binary) << bytes;
  bool caught = false;
  try {
    read_records(rec2);
  } catch (const CorruptionError&) {
    caught = true;
  }
  o.require(caught, "flipped record byte not detected");

  const auto s = small_setup();
  const MemeModel<float> model(s.model);
  const auto ck = (dir / "m.ckpt").string(), ck2 = (dir / "m2.ckpt").string();
  save_checkpoint(ck, model_checkpoint(model));
  const auto loaded = load_model<float>(load_checkpoint(ck));
  save_checkpoint(ck2, model_checkpoint(loaded));
  o.require(slurp(ck) == slurp(ck2), "checkpoint rewrite not bitwise");
  o.require(values_of(loaded, true) == values_of(model, true) && values_of(loaded, false) == values_of(model, false),
            "checkpoint parameters differ");
  bytes = slurp(ck);
  bytes[bytes.size() - 5] ^= 0x01;
  std::ofstream(ck2, std::ios::binary) << bytes;
  caught = false;
  try {
    load_checkpoint(ck2);
  } catch (const CheckpointError&) {
    caught = true;
  }
  o.require(caught, "flipped checkpoint byte not detected");

  // Interrupt after epochs 2 (phase 1) and 5 (phase 2), resume from disk.
  const MemeModel<float> full(s.model);
  TrainHooks<float> hooks;
  hooks.on_epoch_end = [&](const TrainState<float>& st) {
    if (st.epoch == 2 || st.epoch == 5)
      save_checkpoint((dir / ("e" + std::to_string(st.epoch) + ".ckpt")).string(),
                      training_checkpoint(full, st, s.config));
  };
  const auto reference = train_small(s, full, s.config, hooks);
  for (int at : {2, 5}) {
    const auto state = load_checkpoint((dir / ("e" + std::to_string(at) + ".ckpt")).string());
    const auto m = load_model<float>(state);
    const auto r = train_small(s, m, checkpoint_train_config(state), {}, load_train_state(state, m));
    o.require(r.log == reference.log, "log differs after resuming at epoch " + std::to_string(at));
    o.require(values_of(m, true) == values_of(full, true) && values_of(m, false) == values_of(full, false),
              "parameters differ after resuming at epoch " + std::to_string(at));
  }
  if (o.pass)
    o.detail = "bitwise round trips, CRC flips caught, resume at epochs 2 and 5 matches " +
               std::to_string(reference.log.size()) + "-epoch log";
  return o;
}

// 11. Early stopping on fixed metric sequences and in the loop.
Outcome early_stopping() {
  Outcome o;
  const auto stop_at = [](std::size_t patience, const std::vector<double>& m) -> std::size_t {
    EarlyStopping s(patience);
    for (std::size_t i = 0; i < m.size(); ++i) {
      s.update(m[i]);
      if (s.should_stop()) return i + 1;
    }
    return 0;
  };
  struct Case {
    std::size_t patience;
    std::vector<double> metrics;
    std::size_t stop;
  };
  const Case cases[] = {
      {2, {0.5, 0.5, 0.5}, 3},
      {2, {0.5, 0.4, 0.6, 0.6, 0.59}, 5},
      {2, {0.1, 0.2, 0.3, 0.4}, 0},
      {3, {0.5, 0.5, 0.5}, 0},
      {3, {0.5, 0.5, 0.5, 0.5}, 4},
      {3, {0.1, 0.2, 0.2, 0.25, 0.2, 0.1, 0.25}, 7},
  };
  for (const auto& c : cases) {
    const auto got = stop_at(c.patience, c.metrics);
    o.require(got == c.stop, "patience " + std::to_string(c.patience) + " stopped at " + std::to_string(got) +
                                 ", expected " + std::to_string(c.stop));
  }
  o.require(TrainConfig{}.patience == 30, "default patience is not 30");

  // The loop stops exactly where a replay of its own monitored metric says.
  const auto s = small_setup();
  for (std::size_t patience : {2u, 3u}) {
    const MemeModel<float> model(s.model);
    auto c = s.config;
    c.patience = patience;
    c.phases = 1;
    c.max_epochs_per_phase = 15;
    const auto r = train_small(s, model, c);
    std::vector<double> metrics;
    for (const auto& e : r.log) metrics.push_back(e.monitored);
    const auto expect = stop_at(patience, metrics);
    o.require(r.log.size() == (expect == 0 ? 15u : expect),
              "loop with patience " + std::to_string(patience) + " ran " + std::to_string(r.log.size()) + " epochs");
  }
  if (o.pass) o.detail = "6 fixtures and 2 training loops stop on time";
  return o;
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"gradient fidelity", gradient_fidelity},
      {"structural fidelity", structural_fidelity},
      {"cross-layer sharing", cross_layer_sharing},
      {"freeze contract", freeze_contract},
      {"schedule", schedule},
      {"loss oracle", loss_oracle},
      {"metric oracle", metric_oracle},
      {"learning sanity", learning_sanity},
      {"modality ordering", modality_ordering},
      {"serialization", serialization},
      {"early stopping", early_stopping},
  };
  int failures = 0, n = 0;
  for (const auto& [name, check] : criteria) {
    ++n;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << n << " " << name << ": " << o.detail << std::endl;
  }
  std::error_code ec;
  fs::remove_all(scratch_dir(), ec);
  return failures == 0 ? 0 : 1;
}
