// Copyright 2026 The ctxrl Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "ctxrl/sft.hpp"
#include "test_support.hpp"

namespace ctxrl {
namespace {

using testing::ToyWorld;

TEST(SftLoss, UniformPolicyIsLogVocab) {
  const ToyCodec codec(3, 3);
  ASSERT_EQ(codec.vocab_size(), 8);
  const LinearSoftmaxPolicy policy(codec);
  const Instance inst{"x", "k00 v01 k01 v02", "k01", "v02", 5};
  const auto demo = make_demonstration(codec, inst);
  ASSERT_EQ(demo.gold_output.size(), 3u);
  EXPECT_NEAR(sft_loss(policy, policy.init_params(), demo).loss, std::log(8.0), 1e-12);
}

TEST(SftLoss, DemonstrationShape) {
  const ToyCodec codec(4, 4);
  const Instance inst{"x", "k00 v03", "k00", "v03", 3};
  const auto demo = make_demonstration(codec, inst);
  EXPECT_EQ(demo.gold_output, (std::vector<TokenId>{codec.answer_marker(), codec.value_id(3), codec.eos()}));
  EXPECT_EQ(codec.render_output(demo.gold_output), "Therefore, the answer is v03");
}

TEST(SftLoss, GradientMatchesFiniteDifferences) {
  const ToyWorld w;
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto params = testing::random_params(w.policy, gen, 0.7);
    const auto demo = make_demonstration(w.codec, w.data[static_cast<std::size_t>(trial)]);
    const auto analytic = sft_loss(w.policy, params, demo).gradient;
    const auto numeric = testing::finite_difference(
        [&](const std::vector<double>& x) {
          PolicyParams p = params;
          p.weights = x;
          return sft_loss(w.policy, p, demo).loss;
        },
        params.weights);
    EXPECT_LT(testing::relative_error(analytic, numeric), 1e-6);
  }
}

TEST(TrainSft, LowersLoss) {
  const ToyWorld w(5, 40);
  std::vector<Demonstration> demos;
  for (const auto& inst : w.data) demos.push_back(make_demonstration(w.codec, inst));
  SftConfig cfg;
  cfg.epochs = 10;
  const auto r = train_sft(w.policy, w.policy.init_params(), demos, cfg);
  ASSERT_EQ(r.epoch_losses.size(), 10u);
  EXPECT_LT(r.epoch_losses.back(), r.initial_loss);
  EXPECT_NEAR(r.initial_loss, std::log(static_cast<double>(w.codec.vocab_size())), 1e-12);
}

TEST(TrainSft, ZeroLearningRateLeavesParams) {
  const ToyWorld w;
  std::vector<Demonstration> demos{make_demonstration(w.codec, w.data[0])};
  std::mt19937_64 gen(4);
  const auto init = testing::random_params(w.policy, gen, 0.3);
  SftConfig cfg;
  cfg.epochs = 3;
  cfg.learning_rate = 0.0;
  for (auto kind : {OptimizerKind::adam, OptimizerKind::sga}) {
    cfg.optimizer.kind = kind;
    EXPECT_EQ(train_sft(w.policy, init, demos, cfg).params, init);
  }
}

TEST(TrainSft, SingleDemonstrationConverges) {
  const ToyWorld w;
  std::vector<Demonstration> demos{make_demonstration(w.codec, w.data[1])};
  SftConfig cfg;
  cfg.epochs = 1000;
  cfg.learning_rate = 0.1;
  const auto r = train_sft(w.policy, w.policy.init_params(), demos, cfg);
  EXPECT_LT(r.epoch_losses.back(), 0.02);
  // A near-perfect policy reproduces the demonstration greedily.
  SamplingConfig greedy;
  greedy.greedy = true;
  EXPECT_EQ(w.policy.sample_trajectory(r.params, demos[0].input, greedy).tokens, demos[0].gold_output);
}

TEST(TrainSft, Errors) {
  const ToyWorld w;
  EXPECT_THROW(train_sft(w.policy, w.policy.init_params(), {}, SftConfig{}), ConfigError);
  SftConfig bad;
  bad.batch_size = 0;
  std::vector<Demonstration> demos{make_demonstration(w.codec, w.data[0])};
  EXPECT_THROW(train_sft(w.policy, w.policy.init_params(), demos, bad), ConfigError);
}

TEST(TrainSft, DeterministicForSeed) {
  const ToyWorld w(6, 30);
  std::vector<Demonstration> demos;
  for (const auto& inst : w.data) demos.push_back(make_demonstration(w.codec, inst));
  SftConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.seed = 9;
  EXPECT_EQ(train_sft(w.policy, w.policy.init_params(), demos, cfg).params,
            train_sft(w.policy, w.policy.init_params(), demos, cfg).params);
}

TEST(SftSet, OnlyFirstPhaseItems) {
  const ToyWorld w(8, 40);
  PhasePlan plan;
  plan.thresholds = {20, 40};
  const auto demos = build_sft_set(w.codec, w.data, plan);
  std::size_t expected = 0;
  for (const auto& inst : w.data) expected += inst.input_length <= 20;
  EXPECT_EQ(demos.size(), expected);
  for (const auto& d : demos) EXPECT_LE(d.instance.input_length, 20u);
}

TEST(Demonstrations, FileRoundTrip) {
  const ToyWorld w;
  std::vector<Demonstration> demos;
  for (std::size_t i = 0; i < 5; ++i) demos.push_back(make_demonstration(w.codec, w.data[i]));
  const auto dir = testing::temp_dir("demos");
  write_demonstrations((dir / "d.jsonl").string(), w.codec, demos);
  const auto back = load_demonstrations((dir / "d.jsonl").string(), w.codec);
  ASSERT_EQ(back.size(), demos.size());
  for (std::size_t i = 0; i < demos.size(); ++i) {
    EXPECT_EQ(back[i].instance, demos[i].instance);
    EXPECT_EQ(back[i].gold_output, demos[i].gold_output);
  }
  testing::write_file(dir / "bad.jsonl", "{\"id\":\"a\",\"context\":\"k00 v01\",\"question\":\"k00\",\"answer\":\"v01\"}\n");
  EXPECT_THROW(load_demonstrations((dir / "bad.jsonl").string(), w.codec), DataError);
}

}  // namespace
}  // namespace ctxrl
