// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "memotion/gradcheck_suite.hpp"
#include "memotion/synthetic.hpp"

namespace {

using namespace memotion;

class EveryOp : public ::testing::TestWithParam<std::size_t> {};

TEST_P(EveryOp, HundredSeededCases) {
  const auto checks = standard_op_checks();
  const auto& check = checks.at(GetParam());
  const auto rep = run_op_check(check, 100, 77);
  EXPECT_EQ(rep.cases, 100u);
  EXPECT_LT(rep.worst.max_rel_error, kGradTolerance)
      << check.name << " case " << rep.worst_case << " input " << rep.worst_input << " analytic "
      << rep.worst.analytic_at_worst << " numeric " << rep.worst.numeric_at_worst;
}

INSTANTIATE_TEST_SUITE_P(Ops, EveryOp, ::testing::Range<std::size_t>(0, standard_op_checks().size()),
                         [](const auto& info) { return standard_op_checks()[info.param].name; });

TEST(GradSuite, CoversTheListedOps) {
  std::vector<std::string> names;
  for (const auto& c : standard_op_checks()) names.push_back(c.name);
  for (const char* op : {"matmul", "conv2d", "maxpool2d", "global_avg_pool", "softmax", "layer_norm", "relu",
                         "gelu", "tanh", "dropout", "concat", "embedding_lookup", "cross_entropy"})
    EXPECT_NE(std::find(names.begin(), names.end(), op), names.end()) << op;
}

TEST(GradSuite, WrongBackwardIsCaught) {
  const auto rep = run_op_check(faulty_op_check(), 20, 1);
  EXPECT_GT(rep.worst.max_rel_error, 0.1);
  EXPECT_FALSE(rep.passed());
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.text.vocab_size = 40;
  c.text.embed_dim = 4;
  c.text.hidden_dim = 8;
  c.text.num_layers = 2;
  c.text.num_heads = 2;
  c.text.ff_dim = 8;
  c.text.max_seq_len = 8;
  c.image.input_resolution = 32;
  c.image.stack_channels = {2, 2, 3, 3, 4};
  c.heads.hidden1 = 6;
  c.heads.hidden2 = 5;
  return c;
}

TEST(ModelGradient, TinyModelEveryCoordinate) {
  SyntheticConfig sc;
  sc.resolution = 32;
  sc.max_seq_len = 8;
  sc.vocab_size = 40;
  const auto data = generate_synthetic_dataset(10, 3, sc);
  const MemeModel<float> model(tiny_config());
  nudge_zero_parameters(model, 1);
  const auto rep = check_model_gradients(model, std::span<const MemeSample>(data.samples).first(2), 0, 5);
  EXPECT_EQ(rep.worst.checked, model.parameters().count());
  EXPECT_LT(rep.worst.max_rel_error, kGradTolerance) << rep.worst_parameter;
}

TEST(ModelGradient, SingleModalityVariants) {
  SyntheticConfig sc;
  sc.resolution = 32;
  sc.max_seq_len = 8;
  sc.vocab_size = 40;
  const auto data = generate_synthetic_dataset(10, 4, sc);
  for (Variant v : {Variant::Text, Variant::Image}) {
    auto c = tiny_config();
    c.variant = v;
    const MemeModel<float> model(c);
    nudge_zero_parameters(model, 2);
    const auto rep = check_model_gradients(model, std::span<const MemeSample>(data.samples).first(1), 0, 6);
    EXPECT_LT(rep.worst.max_rel_error, kGradTolerance) << variant_name(v) << " " << rep.worst_parameter << " [" << rep.worst.worst_index << "] " << rep.worst.analytic_at_worst << " vs " << rep.worst.numeric_at_worst;
  }
}

TEST(ModelGradient, DeskModelSampledCoordinates) {
  const MemeModel<float> model(ModelConfig{});
  nudge_zero_parameters(model, 3);
  SyntheticConfig sc;
  const auto data = generate_synthetic_dataset(10, 8, sc);
  const auto rep = check_model_gradients(model, std::span<const MemeSample>(data.samples).first(1), 8, 9);
  EXPECT_EQ(rep.tensors, model.parameters().size());
  EXPECT_LT(rep.worst.max_rel_error, kGradTolerance) << rep.worst_parameter;
}

}  // namespace
