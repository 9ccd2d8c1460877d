// Copyright 2026 The ctxrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Policy interface used by the objectives, and the reference autoregressive
// linear-softmax policy.
//
// The reference policy scores every candidate token a at each step with
//
//   logit(a) = w_bias[a] + w_follow * follows_key(a) + w_share * share(a)
//            + w_repeat * [a == previous token]
//            + w_stop * [a == eos] * [answer already emitted]
//
// follows_key(a) is 1 when a appears right after the question key somewhere
// in the context, share(a) is the count of a in the context divided by the
// context length. The correct answer is linearly separable under this map.

#pragma once

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ctxrl/common.hpp"
#include "ctxrl/corpus.hpp"

namespace ctxrl {

// ---------------------------------------------------------------------------
// Parameters and trajectories
// ---------------------------------------------------------------------------

struct PolicyParams {
  int vocab_size = 0;
  int feature_dim = 0;
  std::vector<double> weights;

  static PolicyParams zeros(int vocab_size, int feature_dim) {
    return {vocab_size, feature_dim, std::vector<double>(static_cast<std::size_t>(feature_dim), 0.0)};
  }

  void validate() const {
    if (weights.size() != static_cast<std::size_t>(feature_dim)) {
      throw DataError("params: weight count " + std::to_string(weights.size()) + " != feature_dim " +
                      std::to_string(feature_dim));
    }
    for (double w : weights) {
      if (!std::isfinite(w)) throw DataError("params: non-finite weight");
    }
  }

  bool operator==(const PolicyParams&) const = default;
};

struct Trajectory {
  std::vector<TokenId> tokens;
  /// log pi_old(y_t | x, c, y_<t), untempered.
  std::vector<double> logprobs_old;
  /// True when generation stopped on end-of-sequence rather than the length cap.
  bool terminated = false;

  std::size_t length() const { return tokens.size(); }
  bool operator==(const Trajectory&) const = default;
};

struct SamplingConfig {
  double temperature = 1.0;
  double top_p = 1.0;
  int max_output_len = 8;
  bool greedy = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (!greedy && !(temperature > 0.0)) throw ConfigError("sampling: temperature must be > 0 unless greedy");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("sampling: top_p must be in (0,1]");
    if (max_output_len < 1) throw ConfigError("sampling: max_output_len must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Encoded policy input
// ---------------------------------------------------------------------------

/// Instance in token space together with the per-token context statistics the
/// feature map needs. Built once per instance.
struct PolicyInput {
  std::string instance_id;
  std::vector<TokenId> context;
  std::vector<TokenId> question;
  /// Indexed by token id.
  std::vector<std::uint8_t> follows_key;
  std::vector<double> context_share;
};

inline PolicyInput encode_input(const ToyCodec& codec, const Instance& inst) {
  PolicyInput in;
  in.instance_id = inst.id;
  in.context = codec.encode(inst.context);
  in.question = codec.encode(inst.question);
  const auto V = static_cast<std::size_t>(codec.vocab_size());
  in.follows_key.assign(V, 0);
  in.context_share.assign(V, 0.0);
  if (!in.question.empty()) {
    const TokenId key = in.question.back();
    for (std::size_t i = 0; i + 1 < in.context.size(); ++i) {
      if (in.context[i] == key) in.follows_key[static_cast<std::size_t>(in.context[i + 1])] = 1;
    }
  }
  if (!in.context.empty()) {
    const double inv = 1.0 / static_cast<double>(in.context.size());
    for (TokenId t : in.context) in.context_share[static_cast<std::size_t>(t)] += inv;
  }
  return in;
}

// ---------------------------------------------------------------------------
// Policy concept
// ---------------------------------------------------------------------------

/// What the objectives need from a policy: per-token log-probabilities and
/// the gradient of a weighted sum of them.
template <class P>
concept DifferentiablePolicy = requires(const P& policy, const PolicyParams& params, const PolicyInput& input,
                                        std::span<const TokenId> output, std::span<const double> token_weights) {
  { policy.feature_dim() } -> std::convertible_to<int>;
  { policy.token_logprobs(params, input, output) } -> std::same_as<std::vector<double>>;
  { policy.grad_weighted_logprob(params, input, output, token_weights) } -> std::same_as<std::vector<double>>;
};

// ---------------------------------------------------------------------------
// Linear-softmax policy
// ---------------------------------------------------------------------------

class LinearSoftmaxPolicy {
 public:
  static constexpr int kNumSharedFeatures = 4;

  explicit LinearSoftmaxPolicy(const ToyCodec& codec)
      : vocab_size_(codec.vocab_size()), answer_marker_(codec.answer_marker()), eos_(codec.eos()) {}

  int vocab_size() const { return vocab_size_; }
  int feature_dim() const { return vocab_size_ + kNumSharedFeatures; }
  TokenId eos() const { return eos_; }
  TokenId answer_marker() const { return answer_marker_; }

  int follow_index() const { return vocab_size_; }
  int share_index() const { return vocab_size_ + 1; }
  int repeat_index() const { return vocab_size_ + 2; }
  int stop_index() const { return vocab_size_ + 3; }

  PolicyParams init_params() const { return PolicyParams::zeros(vocab_size_, feature_dim()); }

  /// Dense feature vector phi(state, a). Used by tests and the gradient oracle;
  /// the hot paths below exploit its sparsity instead.
  std::vector<double> features(const PolicyInput& input, std::span<const TokenId> prefix, TokenId a) const {
    std::vector<double> phi(static_cast<std::size_t>(feature_dim()), 0.0);
    const StepState s = state_after(prefix);
    phi[static_cast<std::size_t>(a)] = 1.0;
    phi[static_cast<std::size_t>(follow_index())] = input.follows_key[static_cast<std::size_t>(a)];
    phi[static_cast<std::size_t>(share_index())] = input.context_share[static_cast<std::size_t>(a)];
    phi[static_cast<std::size_t>(repeat_index())] = (a == s.previous) ? 1.0 : 0.0;
    phi[static_cast<std::size_t>(stop_index())] = (a == eos_ && s.answered) ? 1.0 : 0.0;
    return phi;
  }

  /// Log-probabilities of every token at the step following `prefix`.
  std::vector<double> step_logprobs(const PolicyParams& params, const PolicyInput& input,
                                    std::span<const TokenId> prefix) const {
    check_params(params);
    return step_logprobs_impl(params, input, state_after(prefix));
  }

  std::vector<double> token_logprobs(const PolicyParams& params, const PolicyInput& input,
                                     std::span<const TokenId> output) const {
    check_params(params);
    check_tokens(output);
    std::vector<double> out;
    out.reserve(output.size());
    StepState s;
    for (TokenId y : output) {
      const auto lp = step_logprobs_impl(params, input, s);
      out.push_back(lp[static_cast<std::size_t>(y)]);
      advance(s, y);
    }
    return out;
  }

  /// Gradient of sum_t w_t * log pi(y_t | ...). Per step this is
  /// w_t * (phi(y_t) - E_{a~pi}[phi(a)]).
  std::vector<double> grad_weighted_logprob(const PolicyParams& params, const PolicyInput& input,
                                            std::span<const TokenId> output,
                                            std::span<const double> token_weights) const {
    check_params(params);
    check_tokens(output);
    if (token_weights.size() != output.size()) {
      throw ConfigError("grad_weighted_logprob: " + std::to_string(token_weights.size()) + " weights for " +
                        std::to_string(output.size()) + " tokens");
    }
    std::vector<double> grad(static_cast<std::size_t>(feature_dim()), 0.0);
    StepState s;
    for (std::size_t t = 0; t < output.size(); ++t) {
      const double w = token_weights[t];
      const TokenId y = output[t];
      if (w != 0.0) {
        const auto lp = step_logprobs_impl(params, input, s);
        accumulate_score(input, s, lp, y, w, grad);
      }
      advance(s, y);
    }
    return grad;
  }

  /// Mean per-step entropy in nats; 0 for an empty output.
  double trajectory_entropy(const PolicyParams& params, const PolicyInput& input,
                            std::span<const TokenId> output) const {
    check_params(params);
    check_tokens(output);
    if (output.empty()) return 0.0;
    double total = 0.0;
    StepState s;
    for (TokenId y : output) {
      const auto lp = step_logprobs_impl(params, input, s);
      double h = 0.0;
      for (double l : lp) {
        if (l > -std::numeric_limits<double>::infinity()) h -= std::exp(l) * l;
      }
      total += std::max(h, 0.0);
      advance(s, y);
    }
    return total / static_cast<double>(output.size());
  }

  /// Temperature scaling then nucleus truncation; ties in the probability
  /// ordering go to the lower token id. Recorded log-probabilities are the
  /// untempered model values.
  Trajectory sample_trajectory(const PolicyParams& params, const PolicyInput& input,
                               const SamplingConfig& config) const {
    config.validate();
    check_params(params);
    Rng rng(config.seed);
    Trajectory traj;
    StepState s;
    std::vector<int> order(static_cast<std::size_t>(vocab_size_));
    std::vector<double> q(static_cast<std::size_t>(vocab_size_));
    for (int t = 0; t < config.max_output_len; ++t) {
      const auto lp = step_logprobs_impl(params, input, s);
      TokenId choice = 0;
      if (config.greedy) {
        choice = static_cast<TokenId>(std::max_element(lp.begin(), lp.end()) - lp.begin());
      } else {
        double max_scaled = -std::numeric_limits<double>::infinity();
        for (double l : lp) max_scaled = std::max(max_scaled, l / config.temperature);
        double z = 0.0;
        for (std::size_t a = 0; a < q.size(); ++a) {
          q[a] = std::exp(lp[a] / config.temperature - max_scaled);
          z += q[a];
        }
        for (double& v : q) v /= z;
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return q[static_cast<std::size_t>(a)] > q[static_cast<std::size_t>(b)]; });
        std::size_t keep = order.size();
        if (config.top_p < 1.0) {
          double cum = 0.0;
          for (std::size_t i = 0; i < order.size(); ++i) {
            cum += q[static_cast<std::size_t>(order[i])];
            if (cum >= config.top_p) {
              keep = i + 1;
              break;
            }
          }
        }
        double kept_mass = 0.0;
        for (std::size_t i = 0; i < keep; ++i) kept_mass += q[static_cast<std::size_t>(order[i])];
        const double u = rng.uniform() * kept_mass;
        double cum = 0.0;
        choice = static_cast<TokenId>(order[keep - 1]);
        for (std::size_t i = 0; i < keep; ++i) {
          cum += q[static_cast<std::size_t>(order[i])];
          if (u < cum) {
            choice = static_cast<TokenId>(order[i]);
            break;
          }
        }
      }
      traj.tokens.push_back(choice);
      traj.logprobs_old.push_back(lp[static_cast<std::size_t>(choice)]);
      advance(s, choice);
      if (choice == eos_) {
        traj.terminated = true;
        break;
      }
    }
    return traj;
  }

 private:
  struct StepState {
    TokenId previous = -1;
    bool seen_marker = false;
    bool answered = false;
  };

  void advance(StepState& s, TokenId y) const {
    if (s.seen_marker) s.answered = true;
    if (y == answer_marker_) s.seen_marker = true;
    s.previous = y;
  }

  StepState state_after(std::span<const TokenId> prefix) const {
    check_tokens(prefix);
    StepState s;
    for (TokenId y : prefix) advance(s, y);
    return s;
  }

  void check_params(const PolicyParams& params) const {
    if (params.vocab_size != vocab_size_ || params.feature_dim != feature_dim() ||
        params.weights.size() != static_cast<std::size_t>(feature_dim())) {
      throw ConfigError("policy: parameter shape (V=" + std::to_string(params.vocab_size) +
                        ", d=" + std::to_string(params.feature_dim) + ") does not match policy (V=" +
                        std::to_string(vocab_size_) + ", d=" + std::to_string(feature_dim()) + ")");
    }
  }

  void check_tokens(std::span<const TokenId> tokens) const {
    for (TokenId t : tokens) {
      if (t < 0 || t >= vocab_size_) throw DataError("policy: invalid token id " + std::to_string(t));
    }
  }

  std::vector<double> step_logprobs_impl(const PolicyParams& params, const PolicyInput& input,
                                         const StepState& s) const {
    const auto& w = params.weights;
    const double w_follow = w[static_cast<std::size_t>(follow_index())];
    const double w_share = w[static_cast<std::size_t>(share_index())];
    const double w_repeat = w[static_cast<std::size_t>(repeat_index())];
    const double w_stop = w[static_cast<std::size_t>(stop_index())];
    std::vector<double> logits(static_cast<std::size_t>(vocab_size_));
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < logits.size(); ++a) {
      double l = w[a] + w_follow * input.follows_key[a] + w_share * input.context_share[a];
      if (static_cast<TokenId>(a) == s.previous) l += w_repeat;
      if (static_cast<TokenId>(a) == eos_ && s.answered) l += w_stop;
      logits[a] = l;
      max_logit = std::max(max_logit, l);
    }
    double z = 0.0;
    for (double l : logits) z += std::exp(l - max_logit);
    const double log_z = max_logit + std::log(z);
    for (double& l : logits) l -= log_z;
    return logits;
  }

  void accumulate_score(const PolicyInput& input, const StepState& s, const std::vector<double>& lp, TokenId y,
                        double w, std::vector<double>& grad) const {
    double e_follow = 0.0, e_share = 0.0, e_repeat = 0.0, e_stop = 0.0;
    for (std::size_t a = 0; a < lp.size(); ++a) {
      const double p = std::exp(lp[a]);
      grad[a] -= w * p;
      e_follow += p * input.follows_key[a];
      e_share += p * input.context_share[a];
      if (static_cast<TokenId>(a) == s.previous) e_repeat += p;
      if (static_cast<TokenId>(a) == eos_ && s.answered) e_stop += p;
    }
    const auto yi = static_cast<std::size_t>(y);
    grad[yi] += w;
    grad[static_cast<std::size_t>(follow_index())] += w * (input.follows_key[yi] - e_follow);
    grad[static_cast<std::size_t>(share_index())] += w * (input.context_share[yi] - e_share);
    grad[static_cast<std::size_t>(repeat_index())] += w * (((y == s.previous) ? 1.0 : 0.0) - e_repeat);
    grad[static_cast<std::size_t>(stop_index())] += w * (((y == eos_ && s.answered) ? 1.0 : 0.0) - e_stop);
  }

  int vocab_size_;
  TokenId answer_marker_;
  TokenId eos_;
};

static_assert(DifferentiablePolicy<LinearSoftmaxPolicy>);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
//
// Line-delimited text:
//   ctxrl-checkpoint 1
//   vocab_size <V>
//   feature_dim <d>
//   codec_hash <hex>
//   <one weight per line, shortest round-trip decimal>

inline void write_checkpoint(const std::string& path, const PolicyParams& params, const std::string& codec_hash) {
  params.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out << "ctxrl-checkpoint 1\n"
      << "vocab_size " << params.vocab_size << '\n'
      << "feature_dim " << params.feature_dim << '\n'
      << "codec_hash " << codec_hash << '\n';
  for (double w : params.weights) out << format_double(w) << '\n';
  if (!out) throw IoError("write failed for checkpoint '" + path + "'");
}

struct Checkpoint {
  PolicyParams params;
  std::string codec_hash;
};

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  auto expect_line = [&](const std::string& key) {
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": truncated checkpoint header");
    const auto words = split_whitespace(line);
    if (words.size() != 2 || words[0] != key) throw DataError(path + ": expected '" + key + " <value>'");
    return words[1];
  };
  if (expect_line("ctxrl-checkpoint") != "1") throw DataError(path + ": unsupported checkpoint version");
  Checkpoint ck;
  try {
    ck.params.vocab_size = std::stoi(expect_line("vocab_size"));
    ck.params.feature_dim = std::stoi(expect_line("feature_dim"));
  } catch (const std::logic_error&) {
    throw DataError(path + ": bad checkpoint dimensions");
  }
  ck.codec_hash = expect_line("codec_hash");
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ck.params.weights.push_back(parse_double(line));
  }
  ck.params.validate();
  return ck;
}

}  // namespace ctxrl
