// Copyright 2026 The ctxrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Hybrid reward: answer extraction, exact-match rule, LLM judge, max
// combination and overlong length shaping.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <tuple>
#include <unordered_map>
#include <utility>

#include "ctxrl/common.hpp"
#include "ctxrl/corpus.hpp"

namespace ctxrl {

// ---------------------------------------------------------------------------
// Extraction and rule verification
// ---------------------------------------------------------------------------

namespace detail {

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

/// Drops the backslash of LaTeX escapes such as \$ or \%.
inline std::string unescape_latex(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size() && !std::isalnum(static_cast<unsigned char>(s[i + 1]))) {
      out += s[++i];
    } else {
      out += s[i];
    }
  }
  return out;
}

/// Content of the first \boxed{...} in s with balanced braces.
inline std::optional<std::string> boxed_content(std::string_view s) {
  constexpr std::string_view kOpen = "\\boxed{";
  const auto start = s.find(kOpen);
  if (start == std::string_view::npos) return std::nullopt;
  int depth = 1;
  const std::size_t body = start + kOpen.size();
  for (std::size_t i = body; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      ++i;
      continue;
    }
    if (s[i] == '{') ++depth;
    if (s[i] == '}' && --depth == 0) return unescape_latex(s.substr(body, i - body));
  }
  return std::nullopt;
}

}  // namespace detail

/// Final answer after the last "the answer is" (case-insensitive). Trims
/// whitespace, drops one trailing period and unwraps \boxed{...}.
inline std::optional<std::string> extract_answer(std::string_view text) {
  constexpr std::string_view kMarker = "the answer is";
  const std::string lower = detail::ascii_lower(text);
  const auto pos = lower.rfind(kMarker);
  if (pos == std::string::npos) return std::nullopt;
  std::string_view span = detail::trim(text.substr(pos + kMarker.size()));
  if (!span.empty() && span.back() == '.') span = detail::trim(span.substr(0, span.size() - 1));
  if (auto boxed = detail::boxed_content(span)) return std::string(detail::trim(*boxed));
  return std::string(span);
}

/// Case-folded, whitespace-collapsed form used for exact matching.
inline std::string normalize_for_match(std::string_view s) {
  return detail::ascii_lower(join_words(split_whitespace(s)));
}

inline int rule_score(std::string_view predicted, std::string_view gold) {
  return normalize_for_match(predicted) == normalize_for_match(gold) ? 1 : 0;
}

inline int combined_reward(int rule, std::optional<int> judge) { return std::max(rule, judge.value_or(0)); }

// ---------------------------------------------------------------------------
// Overlong shaping
// ---------------------------------------------------------------------------

struct ShapingConfig {
  int l_max = 8;
  int l_cache = 1;

  /// Cache zone defaults to a tenth of the maximum length, at least one token.
  static ShapingConfig with_default_cache(int l_max) { return {l_max, std::max(1, l_max / 10)}; }

  void validate() const {
    if (!(l_cache > 0 && l_cache < l_max)) throw ConfigError("shaping: require 0 < l_cache < l_max");
  }
};

inline double shape_overlong(double reward, std::size_t output_len, const ShapingConfig& config) {
  config.validate();
  const double len = static_cast<double>(output_len);
  const double soft_start = static_cast<double>(config.l_max - config.l_cache);
  if (len <= soft_start) return reward;
  if (len <= static_cast<double>(config.l_max)) return reward + (soft_start - len) / static_cast<double>(config.l_cache);
  return reward - 1.0;
}

// ---------------------------------------------------------------------------
// Judge prompt and verdict
// ---------------------------------------------------------------------------

inline std::string judge_prompt(std::string_view question, std::string_view predicted, std::string_view gold) {
  std::string out =
      "You are an expert in verifying if two answers are the same. Your input is a problem and two answers, "
      "Answer 1 and Answer 2. You need to check if they are equivalent. Your task is to determine if two answers "
      "are equivalent, without attempting to solve the original problem. Compare the answers to verify they "
      "represent identical values or meaning, even when written in different forms or notations. Your output "
      "must follow the following format:\n"
      "1) Provide an explanation for why the answers are equivalent or not.\n"
      "2) Then provide your final answer in the form of: [[YES]] or [[NO]]\n"
      "Problem: ";
  out += question;
  out += " Answer 1: ";
  out += predicted;
  out += " Answer 2: ";
  out += gold;
  return out;
}

struct JudgeVerdict {
  int score = 0;
  bool parse_failed = false;
  bool operator==(const JudgeVerdict&) const = default;
};

/// The last of [[YES]] / [[NO]] in the reply decides; neither present scores
/// 0 with the parse flag set.
inline JudgeVerdict parse_verdict(std::string_view reply) {
  const auto yes = reply.rfind("[[YES]]");
  const auto no = reply.rfind("[[NO]]");
  if (yes == std::string_view::npos && no == std::string_view::npos) return {0, true};
  if (no == std::string_view::npos) return {1, false};
  if (yes == std::string_view::npos) return {0, false};
  return {yes > no ? 1 : 0, false};
}

// ---------------------------------------------------------------------------
// Judge backends
// ---------------------------------------------------------------------------

enum class JudgeKind { none, mock, http };

struct JudgeBackend {
  JudgeKind kind = JudgeKind::mock;
  std::string endpoint;
  std::string model = "mock-judge";
  std::string auth_token;
  double timeout_s = 30.0;
  int max_retries = 3;
  int backoff_ms = 200;
  bool cache_enabled = true;
  std::string cache_file;
  int max_parallel = 4;

  void validate() const {
    if (kind == JudgeKind::http && (endpoint.empty() || model.empty() || auth_token.empty())) {
      throw ConfigError("judge: http backend needs JUDGE_BASE_URL, JUDGE_MODEL and JUDGE_API_KEY");
    }
    if (max_retries < 0) throw ConfigError("judge: max_retries must be >= 0");
    if (!(timeout_s > 0.0)) throw ConfigError("judge: timeout must be > 0");
    if (max_parallel < 1) throw ConfigError("judge: max_parallel must be >= 1");
  }

  /// Fills the http fields from JUDGE_BASE_URL, JUDGE_API_KEY and JUDGE_MODEL.
  void load_env() {
    if (const char* v = std::getenv("JUDGE_BASE_URL")) endpoint = v;
    if (const char* v = std::getenv("JUDGE_API_KEY")) auth_token = v;
    if (const char* v = std::getenv("JUDGE_MODEL")) model = v;
  }
};

/// Sends one rendered judge prompt and returns the raw reply text. Throws
/// JudgeTransportError on failure; the client decides whether to retry.
class JudgeTransport {
 public:
  virtual ~JudgeTransport() = default;
  virtual std::string complete(const std::string& prompt) = 0;
  virtual std::string model() const = 0;
};

/// Deterministic offline judge. Fixture replies are looked up by
/// (question, predicted, gold); anything else gets a reply computed from a
/// lenient comparison that ignores case, spacing and punctuation.
class MockJudge : public JudgeTransport {
 public:
  using Key = std::tuple<std::string, std::string, std::string>;

  void add_fixture(std::string question, std::string predicted, std::string gold, std::string reply) {
    std::lock_guard lock(mu_);
    fixtures_[{std::move(question), std::move(predicted), std::move(gold)}] = std::move(reply);
  }

  /// Makes the next n calls throw JudgeTransportError.
  void fail_next(int n) { pending_failures_ = n; }

  std::string complete(const std::string& prompt) override {
    ++calls_;
    if (pending_failures_.load() > 0) {
      --pending_failures_;
      throw JudgeTransportError("mock judge: injected transport failure");
    }
    const auto [question, predicted, gold] = split_prompt(prompt);
    {
      std::lock_guard lock(mu_);
      auto it = fixtures_.find({question, predicted, gold});
      if (it != fixtures_.end()) return it->second;
    }
    return lenient_key(predicted) == lenient_key(gold) ? "The two answers denote the same value. [[YES]]"
                                                       : "The two answers differ. [[NO]]";
  }

  std::string model() const override { return "mock-judge"; }
  int calls() const { return calls_.load(); }

 private:
  static std::string lenient_key(std::string_view s) {
    std::string out;
    for (unsigned char c : s) {
      if (std::isalnum(c) || c == '.') out += static_cast<char>(std::tolower(c));
    }
    return out;
  }

  static Key split_prompt(const std::string& prompt) {
    const auto q = prompt.rfind("\nProblem: ");
    const auto a1 = prompt.rfind(" Answer 1: ");
    const auto a2 = prompt.rfind(" Answer 2: ");
    if (q == std::string::npos || a1 == std::string::npos || a2 == std::string::npos || !(q < a1 && a1 < a2)) {
      return {"", "", ""};
    }
    const auto qs = q + 10;
    return {prompt.substr(qs, a1 - qs), prompt.substr(a1 + 11, a2 - a1 - 11), prompt.substr(a2 + 11)};
  }

  std::mutex mu_;
  std::map<Key, std::string> fixtures_;
  std::atomic<int> calls_{0};
  std::atomic<int> pending_failures_{0};
};

// ---------------------------------------------------------------------------
// Judge client: retries and cache
// ---------------------------------------------------------------------------

class JudgeClient {
 public:
  JudgeClient(std::shared_ptr<JudgeTransport> transport, int max_retries = 3, int backoff_ms = 200,
              bool cache_enabled = true, int max_parallel = 4)
      : transport_(std::move(transport)),
        max_retries_(max_retries),
        backoff_ms_(backoff_ms),
        cache_enabled_(cache_enabled),
        max_parallel_(std::max(1, max_parallel)) {}

  /// Hash of (question, predicted, gold, model) used as cache key.
  std::string cache_key(std::string_view question, std::string_view predicted, std::string_view gold) const {
    std::uint64_t h = fnv1a64("ctxrl-judge-v1");
    for (std::string_view part : {question, predicted, gold, std::string_view(transport_->model())}) {
      h = fnv1a64(std::to_string(part.size()), h);
      h = fnv1a64(":", h);
      h = fnv1a64(part, h);
    }
    return hex64(h);
  }

  JudgeVerdict judge(std::string_view question, std::string_view predicted, std::string_view gold) {
    const std::string key = cache_key(question, predicted, gold);
    if (cache_enabled_) {
      std::lock_guard lock(mu_);
      auto it = cache_.find(key);
      if (it != cache_.end()) return it->second;
    }
    const std::string prompt = judge_prompt(question, predicted, gold);
    std::string reply;
    for (int attempt = 0;; ++attempt) {
      try {
        reply = send(prompt);
        break;
      } catch (const JudgeTransportError&) {
        if (attempt >= max_retries_) throw;
        if (backoff_ms_ > 0) std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms_ << attempt));
      }
    }
    const JudgeVerdict verdict = parse_verdict(reply);
    if (cache_enabled_) {
      std::lock_guard lock(mu_);
      cache_.emplace(key, verdict);
    }
    return verdict;
  }

  /// Most requests ever outstanding at once.
  int peak_in_flight() const {
    std::lock_guard lock(slot_mu_);
    return peak_;
  }

  std::size_t cache_size() const {
    std::lock_guard lock(mu_);
    return cache_.size();
  }

  /// Cache file: one "<key hash> <yes|no|unparsed>" record per line, sorted
  /// by key.
  void save_cache(const std::string& path) const {
    std::map<std::string, JudgeVerdict> sorted;
    {
      std::lock_guard lock(mu_);
      sorted.insert(cache_.begin(), cache_.end());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write judge cache '" + path + "'");
    for (const auto& [key, v] : sorted) {
      out << key << ' ' << (v.parse_failed ? "unparsed" : (v.score ? "yes" : "no")) << '\n';
    }
  }

  void load_cache(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open judge cache '" + path + "'");
    std::string line;
    std::size_t line_no = 0;
    std::lock_guard lock(mu_);
    while (std::getline(in, line)) {
      ++line_no;
      const auto words = split_whitespace(line);
      if (words.empty()) continue;
      if (words.size() != 2) throw DataError(path + ": line " + std::to_string(line_no) + ": malformed cache record");
      JudgeVerdict v;
      if (words[1] == "yes") {
        v = {1, false};
      } else if (words[1] == "no") {
        v = {0, false};
      } else if (words[1] == "unparsed") {
        v = {0, true};
      } else {
        throw DataError(path + ": line " + std::to_string(line_no) + ": unknown verdict '" + words[1] + "'");
      }
      cache_[words[0]] = v;
    }
  }

  JudgeTransport& transport() { return *transport_; }

 private:
  std::shared_ptr<JudgeTransport> transport_;
  int max_retries_;
  int backoff_ms_;
  bool cache_enabled_;
  int max_parallel_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, JudgeVerdict> cache_;
  mutable std::mutex slot_mu_;
  std::condition_variable slot_cv_;
  int in_flight_ = 0;
  int peak_ = 0;

  std::string send(const std::string& prompt) {
    {
      std::unique_lock lock(slot_mu_);
      slot_cv_.wait(lock, [&] { return in_flight_ < max_parallel_; });
      peak_ = std::max(peak_, ++in_flight_);
    }
    struct Release {
      JudgeClient* self;
      ~Release() {
        {
          std::lock_guard lock(self->slot_mu_);
          --self->in_flight_;
        }
        self->slot_cv_.notify_one();
      }
    } release{this};
    return transport_->complete(prompt);
  }
};

// ---------------------------------------------------------------------------
// Hybrid reward
// ---------------------------------------------------------------------------

struct RewardOutcome {
  int rule = 0;
  std::optional<int> judge;
  int combined = 0;
  /// Overlong-shaped reward; equals `combined` when shaping is off.
  double shaped = 0.0;
  bool judge_parse_failed = false;
  /// Judge was needed but its transport failed (only when failures are tolerated).
  bool judge_failed = false;
  std::optional<std::string> extracted;
};

/// Scores one response. No extracted answer means reward 0 without a judge
/// call; a rule match skips the judge since the maximum is already 1.
class RewardSystem {
 public:
  RewardSystem() = default;
  explicit RewardSystem(std::shared_ptr<JudgeClient> judge) : judge_(std::move(judge)) {}

  bool has_judge() const { return static_cast<bool>(judge_); }

  RewardOutcome score(std::string_view question, std::string_view response, std::string_view gold,
                      bool tolerate_judge_failure = false) const {
    RewardOutcome out;
    out.extracted = extract_answer(response);
    if (out.extracted) {
      out.rule = rule_score(*out.extracted, gold);
      if (out.rule == 0 && judge_) {
        try {
          const auto v = judge_->judge(question, *out.extracted, gold);
          out.judge = v.score;
          out.judge_parse_failed = v.parse_failed;
        } catch (const JudgeTransportError&) {
          if (!tolerate_judge_failure) throw;
          out.judge_failed = true;
        }
      }
    }
    out.combined = combined_reward(out.rule, out.judge);
    out.shaped = out.combined;
    return out;
  }

  std::shared_ptr<JudgeClient> judge_client() const { return judge_; }

 private:
  std::shared_ptr<JudgeClient> judge_;
};

}  // namespace ctxrl
