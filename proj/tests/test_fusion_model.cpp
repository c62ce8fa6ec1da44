// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "memotion/checkpoint.hpp"
#include "memotion/loss.hpp"
#include "memotion/model.hpp"
#include "memotion/synthetic.hpp"

namespace {

using namespace memotion;

const SyntheticDataset& data() {
  static const SyntheticDataset d = [] {
    SyntheticConfig sc;
    sc.max_seq_len = 64;
    return generate_synthetic_dataset(20, 31, sc);
  }();
  return d;
}

std::vector<float> flat(const HeadOutputs<float>& out) {
  std::vector<float> v;
  for (Task t : kAllTasks) v.insert(v.end(), out[t].values().begin(), out[t].values().end());
  return v;
}

TEST(Structure, FullScaleFusedWidth) {
  const auto c = ModelConfig::full_scale();
  EXPECT_EQ(c.image.output_dim(), 512u);
  EXPECT_EQ(c.text.hidden_dim, 2048u);
  EXPECT_EQ(c.feature_dim(), 2560u);
  auto text_only = c;
  text_only.variant = Variant::Text;
  EXPECT_EQ(text_only.feature_dim(), 2048u);
  auto image_only = c;
  image_only.variant = Variant::Image;
  EXPECT_EQ(image_only.feature_dim(), 512u);
}

TEST(Structure, FullScaleHeadStacks) {
  const auto c = ModelConfig::full_scale();
  EXPECT_EQ(c.heads.head_dropout, 0.3);
  EXPECT_EQ(c.heads.feature_dropout, 0.1);
  const HeadBank<float> heads(c.feature_dim(), c.heads, 1);
  for (Task t : kAllTasks) {
    const auto s = heads.layer_shapes(t);
    EXPECT_EQ(s[0], (std::pair<std::size_t, std::size_t>{2560, 512}));
    EXPECT_EQ(s[1], (std::pair<std::size_t, std::size_t>{512, 256}));
    EXPECT_EQ(s[2], (std::pair<std::size_t, std::size_t>{256, class_count(t)}));
  }
  EXPECT_EQ(kClassCounts, (std::array<std::size_t, 5>{3, 4, 4, 4, 2}));
}

TEST(Structure, DeskVariantsHeadInputs) {
  ModelConfig c;
  EXPECT_EQ(MemeModel<float>(c).feature_dim(), 128u);
  c.variant = Variant::Text;
  const MemeModel<float> text(c);
  EXPECT_EQ(text.feature_dim(), 64u);
  EXPECT_EQ(text.image_encoder(), nullptr);
  EXPECT_EQ(text.parameters().count(ParamGroup::ImageEncoder), 0u);
  c.variant = Variant::Image;
  EXPECT_EQ(MemeModel<float>(c).feature_dim(), 64u);
}

TEST(Fuse, ImageFirstAndSplitBack) {
  const MemeModel<float> model(ModelConfig{});
  const auto& s = data().samples[0];
  Tape<float> tape(false);
  auto fused = model.encode(tape, s, false);
  auto img = model.image_encoder()->forward(tape, s.image, false);
  auto txt = model.text_encoder()->forward(tape, s.text, false);
  ASSERT_EQ(fused.size(), 128u);
  auto [a, b] = ops::split(tape, fused, 64);
  EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), img.values().begin()));
  EXPECT_TRUE(std::equal(b.values().begin(), b.values().end(), txt.values().begin()));
  Tape<float> t2;
  EXPECT_EQ(fuse(t2, Tensor<float>::zeros({512}), Tensor<float>::zeros({2048})).size(), 2560u);
}

TEST(Heads, ZeroFeaturesGiveUniformOutputs) {
  const HeadBank<float> heads(16, HeadBankConfig{}, 2);
  Tape<float> tape(false);
  Rng rng(1);
  const auto out = heads.forward(tape, Tensor<float>::zeros({1, 16}), false, rng);
  for (Task t : kAllTasks)
    for (float p : out[t].values()) EXPECT_FLOAT_EQ(p, 1.0f / static_cast<float>(class_count(t)));
}

TEST(Heads, OutputsNormalized) {
  const HeadBank<float> heads(10, HeadBankConfig{}, 3);
  Rng rng(4);
  for (int rep = 0; rep < 100; ++rep) {
    auto x = Tensor<float>::zeros({1, 10});
    for (auto& v : x.mutable_values()) v = static_cast<float>(3 * rng.normal());
    Tape<float> tape(false);
    const auto out = heads.forward(tape, x, rep % 2 == 0, rng);
    for (Task t : kAllTasks) {
      double total = 0;
      for (float p : out[t].values()) {
        EXPECT_GE(p, 0.0f);
        EXPECT_LE(p, 1.0f);
        total += p;
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Heads, IndependentParameters) {
  const HeadBank<float> heads(12, HeadBankConfig{}, 5);
  Rng rng(6);
  auto x = Tensor<float>::zeros({2, 12});
  for (auto& v : x.mutable_values()) v = static_cast<float>(rng.normal());
  auto run = [&] {
    Tape<float> tape(false);
    Rng r(0);
    return heads.forward(tape, x, false, r);
  };
  const auto before = run();
  for (const auto& p : heads.parameters())
    if (p.name.starts_with("sentiment.")) {
      auto t = p.tensor;
      for (auto& v : t.mutable_values()) v += 0.25f;
    }
  const auto after = run();
  EXPECT_NE(std::vector<float>(before[Task::Sentiment].values().begin(), before[Task::Sentiment].values().end()),
            std::vector<float>(after[Task::Sentiment].values().begin(), after[Task::Sentiment].values().end()));
  for (Task t : {Task::Humor, Task::Sarcasm, Task::Offense, Task::Motivation})
    EXPECT_TRUE(std::equal(before[t].values().begin(), before[t].values().end(), after[t].values().begin()));
}

TEST(Model, HeadLossTouchesOnlyItsHeadAndTheEncoders) {
  const MemeModel<float> model(ModelConfig{});
  model.set_phase(Phase::Unfrozen);
  const auto& s = data().samples[1];
  Tape<float> tape;
  Rng rng(7);
  const auto out = model.forward(tape, s, true, rng);
  const int y[] = {s.labels[Task::Humor]};
  const auto w = ClassWeights::uniform();
  tape.backward(ops::weighted_cross_entropy(tape, out[Task::Humor], y, w[Task::Humor]));
  bool encoder_moved = false;
  for (const auto& p : model.parameters()) {
    const bool nonzero =
        p.tensor.has_grad() && std::any_of(p.tensor.grad().begin(), p.tensor.grad().end(), [](float g) { return g != 0; });
    if (p.group == ParamGroup::Heads && !p.name.starts_with("heads.humor.")) {
      EXPECT_FALSE(nonzero) << p.name;
    }
    if (p.group != ParamGroup::Heads) encoder_moved = encoder_moved || nonzero;
  }
  EXPECT_TRUE(encoder_moved);
  model.parameters().zero_grad();
}

TEST(Model, EvalModeIsDeterministic) {
  const MemeModel<float> model(ModelConfig{});
  Rng r1(1), r2(2);
  Tape<float> t1(false), t2(false);
  EXPECT_EQ(flat(model.forward(t1, data().samples[2], false, r1)), flat(model.forward(t2, data().samples[2], false, r2)));
}

TEST(Model, MissingModalityIsAnInputError) {
  const MemeModel<float> model(ModelConfig{});
  auto s = data().samples[3];
  s.image = {};
  Tape<float> tape(false);
  Rng rng(0);
  EXPECT_THROW(model.forward(tape, s, false, rng), InputError);
  auto t = data().samples[3];
  t.text = {};
  EXPECT_THROW(model.forward(tape, t, false, rng), InputError);
  ModelConfig c;
  c.variant = Variant::Text;
  const MemeModel<float> text(c);
  EXPECT_NO_THROW(text.forward(tape, s, false, rng));
}

TEST(Model, VariantsAreNotInterchangeable) {
  ModelConfig c;
  c.variant = Variant::Text;
  const MemeModel<float> text(c);
  const MemeModel<float> multi(ModelConfig{});
  EXPECT_THROW(load_parameters(multi, model_checkpoint(text)), CheckpointError);
  EXPECT_THROW(load_parameters(text, model_checkpoint(multi)), CheckpointError);
}

TEST(Model, PrecisionTwinMatches) {
  const MemeModel<float> model(ModelConfig{});
  const auto twin = model.cast<double>();
  Tape<float> tf(false);
  Tape<double> td(false);
  Rng r1(0), r2(0);
  const auto a = model.forward(tf, data().samples[4], false, r1);
  const auto b = twin.forward(td, data().samples[4], false, r2);
  for (Task t : kAllTasks)
    for (std::size_t i = 0; i < class_count(t); ++i) EXPECT_NEAR(a[t].data()[i], b[t].data()[i], 1e-5);
}

}  // namespace
