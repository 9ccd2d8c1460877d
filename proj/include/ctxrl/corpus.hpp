// Copyright 2026 The ctxrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic key-value QA data, line-delimited dataset I/O, the toy word codec
// and the prompt template.
//
// A synthetic context is a sequence of "key value" word pairs. The question is
// a single key; exactly one pair in the context carries that key and its value
// is the gold answer. Everything else is a distractor pair.

#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxrl/common.hpp"

namespace ctxrl {

using TokenId = std::int32_t;

// ---------------------------------------------------------------------------
// Text helpers
// ---------------------------------------------------------------------------

inline std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

inline std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// ToyCodec
// ---------------------------------------------------------------------------

/// Whitespace word codec over a closed vocabulary. Ids are dense from 0:
/// keys first, then values, then the answer marker and end-of-sequence.
class ToyCodec {
 public:
  static constexpr std::string_view kAnswerMarkerWord = "<ans>";
  static constexpr std::string_view kEosWord = "<eos>";

  ToyCodec(int num_keys, int num_values) : num_keys_(num_keys), num_values_(num_values) {
    if (num_keys < 1 || num_values < 1) throw ConfigError("codec: num_keys and num_values must be >= 1");
    const int key_width = digit_width(num_keys);
    const int value_width = digit_width(num_values);
    for (int k = 0; k < num_keys; ++k) add_word(make_word('k', k, key_width));
    for (int v = 0; v < num_values; ++v) add_word(make_word('v', v, value_width));
    answer_marker_ = add_word(std::string(kAnswerMarkerWord));
    eos_ = add_word(std::string(kEosWord));
  }

  int vocab_size() const { return static_cast<int>(words_.size()); }
  int num_keys() const { return num_keys_; }
  int num_values() const { return num_values_; }
  TokenId answer_marker() const { return answer_marker_; }
  TokenId eos() const { return eos_; }
  TokenId key_id(int k) const { return k; }
  TokenId value_id(int v) const { return num_keys_ + v; }
  bool is_key(TokenId id) const { return id >= 0 && id < num_keys_; }
  bool is_value(TokenId id) const { return id >= num_keys_ && id < num_keys_ + num_values_; }
  bool valid(TokenId id) const { return id >= 0 && id < vocab_size(); }

  const std::string& word(TokenId id) const {
    if (!valid(id)) throw DataError("codec: invalid token id " + std::to_string(id));
    return words_[static_cast<std::size_t>(id)];
  }

  TokenId id(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) throw DataError("codec: unknown word '" + std::string(word) + "'");
    return it->second;
  }

  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> ids;
    for (const auto& w : split_whitespace(text)) ids.push_back(id(w));
    return ids;
  }

  std::string decode(std::span<const TokenId> ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out += ' ';
      out += word(ids[i]);
    }
    return out;
  }

  /// Number of tokens in `text`; every word must be in the vocabulary.
  std::size_t count_tokens(std::string_view text) const { return encode(text).size(); }

  /// Stable fingerprint of the vocabulary, stored in checkpoints.
  std::string hash() const {
    std::uint64_t h = fnv1a64("ctxrl-codec-v1");
    for (const auto& w : words_) {
      h = fnv1a64(w, h);
      h = fnv1a64("\n", h);
    }
    return hex64(h);
  }

  /// Output tokens as response text: the answer marker expands to the phrase
  /// the answer extractor looks for, decoding stops at end-of-sequence.
  std::string render_output(std::span<const TokenId> output) const {
    std::vector<std::string> parts;
    for (TokenId t : output) {
      if (t == eos_) break;
      parts.push_back(t == answer_marker_ ? std::string("Therefore, the answer is") : word(t));
    }
    return join_words(parts);
  }

 private:
  static int digit_width(int n) {
    int w = 1;
    for (int x = n - 1; x >= 10; x /= 10) ++w;
    return std::max(w, 2);
  }

  static std::string make_word(char prefix, int i, int width) {
    std::string digits = std::to_string(i);
    if (digits.size() < static_cast<std::size_t>(width)) digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
    return prefix + digits;
  }

  TokenId add_word(std::string w) {
    const auto id = static_cast<TokenId>(words_.size());
    index_.emplace(w, id);
    words_.push_back(std::move(w));
    return id;
  }

  int num_keys_;
  int num_values_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId answer_marker_ = -1;
  TokenId eos_ = -1;
};

// ---------------------------------------------------------------------------
// Instance
// ---------------------------------------------------------------------------

struct Instance {
  std::string id;
  std::string context;
  std::string question;
  std::string gold_answer;
  /// Codec tokens of question plus context.
  std::size_t input_length = 0;

  bool operator==(const Instance&) const = default;
};

inline Instance make_instance(const ToyCodec& codec, std::string id, std::string context, std::string question,
                              std::string answer) {
  if (answer.empty()) throw DataError("instance '" + id + "': empty answer");
  Instance inst{std::move(id), std::move(context), std::move(question), std::move(answer), 0};
  inst.input_length = codec.count_tokens(inst.question) + codec.count_tokens(inst.context);
  if (inst.input_length == 0) throw DataError("instance '" + inst.id + "': empty input");
  return inst;
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

struct SynthConfig {
  int num_instances = 256;
  int num_keys = 16;
  int num_values = 16;
  std::pair<int, int> length_range{16, 512};
  /// Probability that a distractor pair carries the instance's lure value (a
  /// fixed wrong answer), so the most frequent value is usually not the gold.
  double distractor_rate = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_instances < 0) throw ConfigError("synth: num_instances must be >= 0");
    if (num_keys < 2) throw ConfigError("synth: num_keys must be >= 2");
    if (num_values < 1) throw ConfigError("synth: num_values must be >= 1");
    if (length_range.first > length_range.second) throw ConfigError("synth: length_range min > max");
    if (!(distractor_rate >= 0.0 && distractor_rate <= 1.0)) throw ConfigError("synth: distractor_rate must be in [0,1]");
    if (min_pairs() > max_pairs()) {
      throw ConfigError("synth: length_range too small to hold one key-value pair plus the question");
    }
  }

  // input_length = 1 (question key) + 2 * pairs
  int min_pairs() const { return std::max(1, length_range.first / 2); }
  int max_pairs() const { return (length_range.second - 1) / 2; }
};

inline std::vector<Instance> generate_synthetic(const SynthConfig& config) {
  config.validate();
  const ToyCodec codec(config.num_keys, config.num_values);
  Rng rng(config.seed);
  std::vector<Instance> out;
  out.reserve(static_cast<std::size_t>(config.num_instances));
  for (int n = 0; n < config.num_instances; ++n) {
    const int pairs = static_cast<int>(rng.between(config.min_pairs(), config.max_pairs()));
    const int question_key = static_cast<int>(rng.below(static_cast<std::uint64_t>(config.num_keys)));
    const int gold_value = static_cast<int>(rng.below(static_cast<std::uint64_t>(config.num_values)));
    const int gold_slot = static_cast<int>(rng.below(static_cast<std::uint64_t>(pairs)));
    int lure_value = gold_value;
    if (config.num_values > 1) {
      lure_value = static_cast<int>(rng.below(static_cast<std::uint64_t>(config.num_values - 1)));
      if (lure_value >= gold_value) ++lure_value;
    }

    std::vector<std::string> words;
    words.reserve(static_cast<std::size_t>(2 * pairs));
    for (int p = 0; p < pairs; ++p) {
      int key = question_key;
      int value = gold_value;
      if (p != gold_slot) {
        // any key but the question key
        key = static_cast<int>(rng.below(static_cast<std::uint64_t>(config.num_keys - 1)));
        if (key >= question_key) ++key;
        value = rng.uniform() < config.distractor_rate
                    ? lure_value
                    : static_cast<int>(rng.below(static_cast<std::uint64_t>(config.num_values)));
      }
      words.push_back(codec.word(codec.key_id(key)));
      words.push_back(codec.word(codec.value_id(value)));
    }

    char id[32];
    std::snprintf(id, sizeof(id), "syn-%06d", n);
    out.push_back(make_instance(codec, id, join_words(words), codec.word(codec.key_id(question_key)),
                                codec.word(codec.value_id(gold_value))));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

namespace detail {

inline std::string require_string_field(const nlohmann::json& rec, const char* field, std::size_t line_no) {
  auto it = rec.find(field);
  if (it == rec.end()) {
    throw DataError("line " + std::to_string(line_no) + ": missing field \"" + field + "\"");
  }
  if (!it->is_string()) {
    throw DataError("line " + std::to_string(line_no) + ": field \"" + field + "\" must be a string");
  }
  return it->get<std::string>();
}

/// Calls fn(json record, 1-based line number) for each nonblank line.
template <class Fn>
void for_each_json_line(const std::string& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (split_whitespace(line).empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(path + ": line " + std::to_string(line_no) + ": malformed record (" + e.what() + ")");
    }
    if (!rec.is_object()) throw DataError(path + ": line " + std::to_string(line_no) + ": record is not an object");
    fn(rec, line_no);
  }
}

inline std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  return out;
}

}  // namespace detail

inline nlohmann::json instance_to_json(const Instance& inst) {
  return nlohmann::json{{"id", inst.id}, {"context", inst.context}, {"question", inst.question}, {"answer", inst.gold_answer}};
}

inline std::vector<Instance> load_dataset(const std::string& path, const ToyCodec& codec) {
  std::vector<Instance> out;
  std::unordered_set<std::string> seen;
  detail::for_each_json_line(path, [&](const nlohmann::json& rec, std::size_t line_no) {
    try {
      auto id = detail::require_string_field(rec, "id", line_no);
      auto context = detail::require_string_field(rec, "context", line_no);
      auto question = detail::require_string_field(rec, "question", line_no);
      auto answer = detail::require_string_field(rec, "answer", line_no);
      if (!seen.insert(id).second) throw DataError("line " + std::to_string(line_no) + ": duplicate id '" + id + "'");
      out.push_back(make_instance(codec, std::move(id), std::move(context), std::move(question), std::move(answer)));
    } catch (const DataError& e) {
      const std::string msg = e.what();
      throw DataError(path + ": " + (msg.rfind("line ", 0) == 0 ? msg : "line " + std::to_string(line_no) + ": " + msg));
    }
  });
  return out;
}

inline void write_dataset(const std::string& path, const std::vector<Instance>& instances) {
  auto out = detail::open_for_write(path);
  for (const auto& inst : instances) out << instance_to_json(inst).dump() << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Prompt template
// ---------------------------------------------------------------------------

inline std::string render_prompt(const Instance& inst) {
  if (inst.context.empty()) throw DataError("render_prompt: empty context");
  if (inst.question.empty()) throw DataError("render_prompt: empty question");
  return "Please read the following text and answer the question below.\n<text> " + inst.context + " </text> " +
         inst.question + "\nFormat your response as follows: \"Therefore, the answer is (insert answer here)\".";
}

}  // namespace ctxrl
