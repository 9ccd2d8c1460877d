// Copyright 2026 The ctxrl Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <thread>

#include "ctxrl/rewards.hpp"
#include "test_support.hpp"

namespace ctxrl {
namespace {

TEST(Extract, TemplateCase) { EXPECT_EQ(extract_answer("Therefore, the answer is 42."), "42"); }

TEST(Extract, BoxedDollarCase) {
  EXPECT_EQ(extract_answer("Therefore, the answer is \\boxed{\\$32.4} million."), "$32.4");
}

TEST(Extract, MissingMarker) { EXPECT_EQ(extract_answer("no final statement"), std::nullopt); }

TEST(Extract, MoreFixtures) {
  EXPECT_EQ(extract_answer("THE ANSWER IS   v03  "), "v03");
  EXPECT_EQ(extract_answer("First the answer is 1. Wait, the answer is 2."), "2");
  EXPECT_EQ(extract_answer("the answer is \\boxed{\\frac{1}{2}}"), "\\frac{1}{2}");
  EXPECT_EQ(extract_answer("the answer is 3.14"), "3.14");
  EXPECT_EQ(extract_answer("the answer is 3.."), "3.");
  EXPECT_EQ(extract_answer("the answer is"), "");
  EXPECT_EQ(extract_answer("Therefore, the answer is k01 v02"), "k01 v02");
}

TEST(RuleScore, Fixtures) {
  EXPECT_EQ(rule_score("42", "42"), 1);
  EXPECT_EQ(rule_score("980,000", "980000"), 0);
  EXPECT_EQ(rule_score("  foo ", "FOO"), 1);
  EXPECT_EQ(rule_score("new   york", "New York"), 1);
  EXPECT_EQ(rule_score("4", "four"), 0);
}

TEST(Combined, MaxOverAllBinaryPairs) {
  for (int rule : {0, 1}) {
    for (int judge : {0, 1}) EXPECT_EQ(combined_reward(rule, judge), std::max(rule, judge));
  }
  EXPECT_EQ(combined_reward(1, std::nullopt), 1);
  EXPECT_EQ(combined_reward(0, std::nullopt), 0);
}

TEST(Shaping, BranchValues) {
  const ShapingConfig c{100, 20};
  EXPECT_EQ(shape_overlong(1.0, 80, c), 1.0);
  EXPECT_EQ(shape_overlong(1.0, 90, c), 0.5);
  EXPECT_EQ(shape_overlong(1.0, 150, c), 0.0);
  EXPECT_EQ(shape_overlong(0.0, 150, c), -1.0);
}

TEST(Shaping, ContinuousAndMonotone) {
  const ShapingConfig c{100, 20};
  // Both breakpoints: approach from each side.
  EXPECT_NEAR(shape_overlong(1.0, 80, c), 1.0 + (80.0 - 80.0) / 20.0, 1e-12);
  EXPECT_NEAR(shape_overlong(1.0, 100, c), 0.0, 1e-12);
  EXPECT_NEAR(shape_overlong(1.0, 101, c), 0.0, 1e-12);
  double last = 1e9;
  for (std::size_t len = 0; len < 1000; ++len) {
    const double v = shape_overlong(1.0, len, c);
    EXPECT_LE(v, last);
    EXPECT_LE(v, 1.0);
    last = v;
  }
}

TEST(Shaping, DefaultCacheIsTenthOfMax) {
  EXPECT_EQ(ShapingConfig::with_default_cache(100).l_cache, 10);
  EXPECT_EQ(ShapingConfig::with_default_cache(8).l_cache, 1);
  EXPECT_THROW(shape_overlong(1.0, 1, ShapingConfig{10, 10}), ConfigError);
  EXPECT_THROW(shape_overlong(1.0, 1, ShapingConfig{10, 0}), ConfigError);
}

TEST(JudgePrompt, MatchesGoldenFixtureByteForByte) {
  const auto golden = testing::read_file(testing::fixture_path("judge_prompt_golden.txt"));
  ASSERT_FALSE(golden.empty());
  EXPECT_EQ(judge_prompt("What was the total revenue in 2019?", "$32.4 million", "32,400,000 dollars"), golden);
}

TEST(Verdict, CannedReplies) {
  struct Case {
    const char* reply;
    int score;
    bool parse_failed;
  };
  const Case cases[] = {
      {"The answers are equivalent. [[YES]]", 1, false},
      {"[[NO]]", 0, false},
      {"maybe", 0, true},
      {"", 0, true},
      {"[[YES]] at first, but on reflection [[NO]]", 0, false},
      {"[[NO]] ... actually they match: [[YES]]", 1, false},
      {"[YES] without double brackets", 0, true},
      {"[[yes]] lower case is not the marker", 0, true},
      {"1) Both denote 0.5.\n2) [[YES]]\n", 1, false},
      {"Explanation: different units.\nFinal: [[NO]]", 0, false},
      {"[[YES]][[NO]][[YES]]", 1, false},
      {"The word NO and YES without markers", 0, true},
  };
  for (const auto& c : cases) {
    const auto v = parse_verdict(c.reply);
    EXPECT_EQ(v.score, c.score) << c.reply;
    EXPECT_EQ(v.parse_failed, c.parse_failed) << c.reply;
  }
}

std::shared_ptr<MockJudge> fixture_mock() {
  auto mock = std::make_shared<MockJudge>();
  mock->add_fixture("q", "a", "b", "They are equivalent. [[YES]]");
  mock->add_fixture("q", "c", "b", "Not equal. [[NO]]");
  mock->add_fixture("q", "d", "b", "maybe");
  return mock;
}

TEST(JudgeClient, MockVerdicts) {
  auto mock = fixture_mock();
  JudgeClient client(mock, 0, 0);
  EXPECT_EQ(client.judge("q", "a", "b"), (JudgeVerdict{1, false}));
  EXPECT_EQ(client.judge("q", "c", "b"), (JudgeVerdict{0, false}));
  EXPECT_EQ(client.judge("q", "d", "b"), (JudgeVerdict{0, true}));
}

TEST(JudgeClient, CacheAvoidsSecondCall) {
  auto mock = fixture_mock();
  JudgeClient client(mock, 0, 0, true);
  client.judge("q", "a", "b");
  client.judge("q", "a", "b");
  EXPECT_EQ(mock->calls(), 1);
  JudgeClient uncached(mock, 0, 0, false);
  uncached.judge("q", "a", "b");
  uncached.judge("q", "a", "b");
  EXPECT_EQ(mock->calls(), 3);
}

TEST(JudgeClient, RetriesThenFails) {
  auto mock = fixture_mock();
  JudgeClient client(mock, 3, 0);
  mock->fail_next(3);
  EXPECT_EQ(client.judge("q", "a", "b").score, 1);
  EXPECT_EQ(mock->calls(), 4);
  mock->fail_next(4);
  EXPECT_THROW(client.judge("q", "c", "b"), JudgeTransportError);
}

TEST(JudgeClient, CacheFileRoundTrip) {
  const auto dir = testing::temp_dir("judge_cache");
  auto mock = fixture_mock();
  JudgeClient a(mock, 0, 0);
  a.judge("q", "a", "b");
  a.judge("q", "c", "b");
  a.judge("q", "d", "b");
  a.save_cache((dir / "cache.txt").string());
  JudgeClient b(mock, 0, 0);
  b.load_cache((dir / "cache.txt").string());
  const int before = mock->calls();
  EXPECT_EQ(b.judge("q", "a", "b"), (JudgeVerdict{1, false}));
  EXPECT_EQ(b.judge("q", "c", "b"), (JudgeVerdict{0, false}));
  EXPECT_EQ(b.judge("q", "d", "b"), (JudgeVerdict{0, true}));
  EXPECT_EQ(mock->calls(), before);
}

TEST(JudgeClient, ConcurrentUseRespectsParallelLimit) {
  class SlowJudge : public JudgeTransport {
   public:
    std::string complete(const std::string&) override {
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
      return "[[YES]]";
    }
    std::string model() const override { return "slow"; }
  };
  JudgeClient client(std::make_shared<SlowJudge>(), 0, 0, true, 2);
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 5; ++i) client.judge("q", std::to_string(t * 10 + i), "g");
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_LE(client.peak_in_flight(), 2);
  EXPECT_EQ(client.cache_size(), 40u);
}

TEST(RewardSystem, AbsentExtractionScoresZeroWithoutJudgeCall) {
  auto mock = fixture_mock();
  RewardSystem rs(std::make_shared<JudgeClient>(mock, 0, 0));
  const auto out = rs.score("q", "I do not know", "b");
  EXPECT_EQ(out.combined, 0);
  EXPECT_FALSE(out.judge.has_value());
  EXPECT_EQ(mock->calls(), 0);
}

TEST(RewardSystem, RuleZeroJudgeOneGivesOne) {
  auto mock = fixture_mock();
  RewardSystem rs(std::make_shared<JudgeClient>(mock, 0, 0));
  const auto out = rs.score("q", "Therefore, the answer is a.", "b");
  EXPECT_EQ(out.rule, 0);
  EXPECT_EQ(out.judge, 1);
  EXPECT_EQ(out.combined, 1);
  EXPECT_LE(out.shaped, out.combined);
}

TEST(RewardSystem, RuleMatchNeedsNoJudge) {
  auto mock = fixture_mock();
  RewardSystem rs(std::make_shared<JudgeClient>(mock, 0, 0));
  const auto out = rs.score("q", "the answer is b", "b");
  EXPECT_EQ(out.rule, 1);
  EXPECT_EQ(out.combined, 1);
  EXPECT_EQ(mock->calls(), 0);
}

TEST(RewardSystem, ParseFailureScoresZeroWithFlag) {
  auto mock = fixture_mock();
  RewardSystem rs(std::make_shared<JudgeClient>(mock, 0, 0));
  const auto out = rs.score("q", "the answer is d", "b");
  EXPECT_EQ(out.combined, 0);
  EXPECT_TRUE(out.judge_parse_failed);
}

TEST(RewardSystem, TransportFailurePropagatesUnlessTolerated) {
  auto mock = fixture_mock();
  RewardSystem rs(std::make_shared<JudgeClient>(mock, 1, 0, false));
  mock->fail_next(2);
  EXPECT_THROW(rs.score("q", "the answer is a", "b"), JudgeTransportError);
  mock->fail_next(2);
  const auto out = rs.score("q", "the answer is a", "b", true);
  EXPECT_TRUE(out.judge_failed);
  EXPECT_EQ(out.combined, 0);
}

TEST(RewardSystem, NoJudgeIsRuleOnly) {
  RewardSystem rs;
  EXPECT_EQ(rs.score("q", "the answer is a", "b").combined, 0);
  EXPECT_EQ(rs.score("q", "the answer is B.", "b").combined, 1);
}

TEST(JudgeBackend, HttpNeedsCredentials) {
  JudgeBackend b;
  b.kind = JudgeKind::http;
  EXPECT_THROW(b.validate(), ConfigError);
  b.endpoint = "http://localhost:1";
  b.model = "m";
  b.auth_token = "t";
  EXPECT_NO_THROW(b.validate());
}

}  // namespace
}  // namespace ctxrl
