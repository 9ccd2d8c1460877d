// Copyright 2026 The ctxrl Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>
#include <set>

#include "ctxrl/corpus.hpp"
#include "ctxrl/curriculum.hpp"
#include "test_support.hpp"

namespace ctxrl {
namespace {

using testing::read_file;
using testing::temp_dir;
using testing::write_file;

SynthConfig small_config(std::uint64_t seed, int n) {
  SynthConfig c;
  c.seed = seed;
  c.num_instances = n;
  return c;
}

TEST(Codec, IdsAreDenseAndReservedIdsDistinct) {
  const ToyCodec codec(16, 16);
  EXPECT_EQ(codec.vocab_size(), 34);
  EXPECT_NE(codec.answer_marker(), codec.eos());
  for (TokenId id = 0; id < codec.vocab_size(); ++id) EXPECT_EQ(codec.id(codec.word(id)), id);
}

TEST(Codec, EncodeIsTableLookup) {
  const ToyCodec codec(16, 16);
  const auto ids = codec.encode("k03 v11");
  ASSERT_EQ(ids.size(), 2u);
  EXPECT_EQ(ids[0], codec.key_id(3));
  EXPECT_EQ(ids[1], codec.value_id(11));
}

TEST(Codec, UnknownWordNamesTheOffender) {
  const ToyCodec codec(4, 4);
  try {
    codec.encode("k01 zzz");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("zzz"), std::string::npos);
  }
  EXPECT_THROW(codec.word(99), DataError);
  EXPECT_THROW(codec.word(-1), DataError);
}

TEST(Codec, RoundTripOnRandomStrings) {
  const ToyCodec codec(16, 16);
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> words;
    const int n = 1 + static_cast<int>(gen() % 30);
    for (int i = 0; i < n; ++i) words.push_back(codec.word(static_cast<TokenId>(gen() % codec.vocab_size())));
    std::string text;
    for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
    EXPECT_EQ(codec.decode(codec.encode(text)), text);
  }
  // Whitespace-normalized.
  EXPECT_EQ(codec.decode(codec.encode("  k01\t v02 \n")), "k01 v02");
}

TEST(Codec, WideVocabularyPadsToSameWidth) {
  const ToyCodec codec(120, 3);
  EXPECT_EQ(codec.word(codec.key_id(7)), "k007");
  EXPECT_EQ(codec.word(codec.value_id(2)), "v02");
}

TEST(Codec, HashDependsOnVocabulary) {
  EXPECT_EQ(ToyCodec(4, 4).hash(), ToyCodec(4, 4).hash());
  EXPECT_NE(ToyCodec(4, 4).hash(), ToyCodec(3, 5).hash());
}

TEST(Codec, RenderOutputExpandsMarkerAndStopsAtEos) {
  const ToyCodec codec(4, 4);
  const std::vector<TokenId> out{codec.key_id(1), codec.answer_marker(), codec.value_id(2), codec.eos(), codec.value_id(3)};
  EXPECT_EQ(codec.render_output(out), "k01 Therefore, the answer is v02");
}

TEST(Synthetic, SeedSevenFourInstancesEachContainQuestionKeyOnce) {
  const auto data = generate_synthetic(small_config(7, 4));
  ASSERT_EQ(data.size(), 4u);
  for (const auto& inst : data) {
    const auto words = split_whitespace(inst.context);
    int hits = 0;
    for (std::size_t i = 0; i < words.size(); i += 2) hits += words[i] == inst.question;
    EXPECT_EQ(hits, 1) << inst.id;
  }
}

TEST(Synthetic, Deterministic) {
  const auto dir = temp_dir("synth_det");
  write_dataset((dir / "a.jsonl").string(), generate_synthetic(small_config(3, 50)));
  write_dataset((dir / "b.jsonl").string(), generate_synthetic(small_config(3, 50)));
  EXPECT_EQ(read_file(dir / "a.jsonl"), read_file(dir / "b.jsonl"));
  EXPECT_NE(generate_synthetic(small_config(4, 50)), generate_synthetic(small_config(3, 50)));
}

TEST(Synthetic, EveryInstanceSolvableAndWithinRange) {
  SynthConfig cfg = small_config(9, 400);
  cfg.length_range = {16, 512};
  const ToyCodec codec(cfg.num_keys, cfg.num_values);
  for (const auto& inst : generate_synthetic(cfg)) {
    EXPECT_GE(inst.input_length, 16u);
    EXPECT_LE(inst.input_length, 512u);
    EXPECT_EQ(inst.input_length, codec.count_tokens(inst.context) + codec.count_tokens(inst.question));
    const auto words = split_whitespace(inst.context);
    ASSERT_EQ(words.size() % 2, 0u);
    bool adjacent = false;
    for (std::size_t i = 0; i < words.size(); i += 2) {
      EXPECT_TRUE(codec.is_key(codec.id(words[i])));
      EXPECT_TRUE(codec.is_value(codec.id(words[i + 1])));
      if (words[i] == inst.question) adjacent = words[i + 1] == inst.gold_answer;
    }
    EXPECT_TRUE(adjacent) << inst.id;
  }
}

TEST(Synthetic, LengthHistogramSpansBothBuckets) {
  SynthConfig cfg = small_config(1, 1000);
  cfg.length_range = {16, 512};
  std::size_t short_items = 0, long_items = 0;
  for (const auto& inst : generate_synthetic(cfg)) {
    if (inst.input_length <= 128) ++short_items;
    if (inst.input_length >= 129 && inst.input_length <= 512) ++long_items;
  }
  EXPECT_GT(short_items, 0u);
  EXPECT_GT(long_items, 0u);
  EXPECT_EQ(short_items + long_items, 1000u);
}

TEST(Synthetic, RangeTooSmallIsConfigError) {
  SynthConfig cfg = small_config(1, 1);
  cfg.length_range = {1, 2};
  EXPECT_THROW(generate_synthetic(cfg), ConfigError);
  cfg.length_range = {10, 5};
  EXPECT_THROW(generate_synthetic(cfg), ConfigError);
  cfg = small_config(1, 1);
  cfg.distractor_rate = 1.5;
  EXPECT_THROW(generate_synthetic(cfg), ConfigError);
}

TEST(Synthetic, MinimalRangeHoldsOnePair) {
  SynthConfig cfg = small_config(1, 5);
  cfg.length_range = {3, 3};
  for (const auto& inst : generate_synthetic(cfg)) EXPECT_EQ(inst.input_length, 3u);
}

TEST(Dataset, ThreeValidLinesInOrder) {
  const auto dir = temp_dir("ds3");
  write_file(dir / "d.jsonl",
             R"({"id":"a","context":"k00 v01","question":"k00","answer":"v01"}
{"id":"b","context":"k01 v02 k00 v00","question":"k01","answer":"v02"}
{"id":"c","context":"k02 v03","question":"k02","answer":"v03"}
)");
  const auto data = load_dataset((dir / "d.jsonl").string(), ToyCodec(4, 4));
  ASSERT_EQ(data.size(), 3u);
  EXPECT_EQ(data[0].id, "a");
  EXPECT_EQ(data[1].id, "b");
  EXPECT_EQ(data[2].id, "c");
  EXPECT_EQ(data[1].input_length, 5u);
}

TEST(Dataset, MissingAnswerCitesLineTwo) {
  const auto dir = temp_dir("ds_missing");
  write_file(dir / "d.jsonl",
             R"({"id":"a","context":"k00 v01","question":"k00","answer":"v01"}
{"id":"b","context":"k01 v02","question":"k01"}
)");
  try {
    load_dataset((dir / "d.jsonl").string(), ToyCodec(4, 4));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("answer"), std::string::npos) << msg;
  }
}

TEST(Dataset, DuplicateIdRejected) {
  const auto dir = temp_dir("ds_dup");
  write_file(dir / "d.jsonl",
             R"({"id":"a","context":"k00 v01","question":"k00","answer":"v01"}
{"id":"a","context":"k01 v02","question":"k01","answer":"v02"}
)");
  try {
    load_dataset((dir / "d.jsonl").string(), ToyCodec(4, 4));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos);
  }
}

TEST(Dataset, MalformedJsonAndUnknownWordsCiteLine) {
  const auto dir = temp_dir("ds_bad");
  write_file(dir / "bad.jsonl", "{\"id\":\"a\",\"context\":\"k00 v01\",\"question\":\"k00\",\"answer\":\"v01\"}\n{not json\n");
  try {
    load_dataset((dir / "bad.jsonl").string(), ToyCodec(4, 4));
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  write_file(dir / "word.jsonl", "{\"id\":\"a\",\"context\":\"k00 zzz\",\"question\":\"k00\",\"answer\":\"v01\"}\n");
  try {
    load_dataset((dir / "word.jsonl").string(), ToyCodec(4, 4));
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("zzz"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_dataset((dir / "absent.jsonl").string(), ToyCodec(4, 4)), IoError);
}

TEST(Dataset, WriteThenLoadRoundTrip) {
  const auto dir = temp_dir("ds_rt");
  const auto data = generate_synthetic(small_config(21, 64));
  write_dataset((dir / "d.jsonl").string(), data);
  EXPECT_EQ(load_dataset((dir / "d.jsonl").string(), ToyCodec(16, 16)), data);
}

TEST(Prompt, TemplateContainsContextAndQuestion) {
  const ToyCodec codec(4, 4);
  Instance inst{"x", "C", "Q", "A", 2};
  const auto p = render_prompt(inst);
  EXPECT_NE(p.find("<text> C </text> Q"), std::string::npos);
  EXPECT_EQ(p,
            "Please read the following text and answer the question below.\n<text> C </text> Q\n"
            "Format your response as follows: \"Therefore, the answer is (insert answer here)\".");
}

TEST(Prompt, EndsWithInsertAnswerHere) {
  for (const auto& inst : generate_synthetic(small_config(2, 10))) {
    const auto p = render_prompt(inst);
    const std::string tail = "(insert answer here)\".";
    ASSERT_GE(p.size(), tail.size());
    EXPECT_EQ(p.substr(p.size() - tail.size()), tail);
  }
}

TEST(Prompt, EmptyContextOrQuestionIsError) {
  EXPECT_THROW(render_prompt(Instance{"x", "", "Q", "A", 1}), DataError);
  EXPECT_THROW(render_prompt(Instance{"x", "C", "", "A", 1}), DataError);
}

}  // namespace
}  // namespace ctxrl
