// Copyright 2026 The ctxrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Group-relative advantages, clipped surrogate objectives (GRPO, DAPO, PPO)
// with exact parameter gradients, dynamic sampling and a KL diagnostic.
//
// All objectives are maximized. Gradients are assembled as one
// grad_weighted_logprob call per trajectory, where each token weight is the
// derivative of the objective with respect to that token's log-probability:
//
//   d/d logp [min(r A, clip(r, lo, hi) A)] = r A   (unclipped branch)
//                                          = 0     (clipped branch active)
//
// The clipped branch is active when A > 0 and r > hi, or A < 0 and r < lo.

#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctxrl/common.hpp"
#include "ctxrl/policy.hpp"

namespace ctxrl {

enum class Algorithm { grpo, dapo, ppo };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::grpo: return "grpo";
    case Algorithm::dapo: return "dapo";
    case Algorithm::ppo: return "ppo";
  }
  return "?";
}

inline Algorithm algorithm_from_string(const std::string& s) {
  if (s == "grpo") return Algorithm::grpo;
  if (s == "dapo") return Algorithm::dapo;
  if (s == "ppo") return Algorithm::ppo;
  throw ConfigError("unknown algorithm '" + s + "' (expected grpo, dapo or ppo)");
}

struct ObjectiveConfig {
  Algorithm algorithm = Algorithm::grpo;
  double eps = 0.2;
  double eps_low = 0.2;
  double eps_high = 0.28;
  /// KL penalty weight. Zero removes the term.
  double beta = 0.0;
  int group_size = 8;

  void validate() const {
    if (!(eps > 0.0)) throw ConfigError("objective: eps must be > 0");
    if (!(eps_low > 0.0 && eps_high > 0.0)) throw ConfigError("objective: eps_low and eps_high must be > 0");
    if (eps_low > eps_high) throw ConfigError("objective: eps_low must be <= eps_high");
    if (!(beta >= 0.0)) throw ConfigError("objective: beta must be >= 0");
    if (group_size < 2) throw ConfigError("objective: group size G must be >= 2");
  }
};

struct RolloutGroup {
  PolicyInput input;
  std::vector<Trajectory> trajectories;
  /// Combined (max of rule and judge) reward per trajectory.
  std::vector<double> rewards;
  /// Overlong-shaped rewards; equal to `rewards` outside the DAPO path.
  std::vector<double> shaped_rewards;
  /// One per trajectory, broadcast over its tokens. Empty until normalized.
  std::vector<double> advantages;

  std::size_t size() const { return trajectories.size(); }
  const std::string& instance_id() const { return input.instance_id; }
};

struct ObjectiveResult {
  double value = 0.0;
  std::vector<double> gradient;
  std::size_t tokens = 0;
  std::size_t clipped_tokens = 0;

  double clip_fraction() const { return tokens ? static_cast<double>(clipped_tokens) / static_cast<double>(tokens) : 0.0; }
};

// ---------------------------------------------------------------------------
// Advantages and filtering
// ---------------------------------------------------------------------------

inline bool has_variance(std::span<const double> values) {
  for (double v : values) {
    if (v != values.front()) return true;
  }
  return false;
}

/// (r_i - mean) / std with the population standard deviation. A constant
/// group maps to all-zero advantages.
inline std::vector<double> group_normalize(std::span<const double> rewards) {
  if (rewards.size() < 2) throw ConfigError("group_normalize: need at least 2 rewards, got " + std::to_string(rewards.size()));
  std::vector<double> adv(rewards.size(), 0.0);
  if (!has_variance(rewards)) return adv;
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double std_dev = std::sqrt(var / n);
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / std_dev;
  return adv;
}

/// Keeps the groups whose shaped rewards are not all equal, in input order.
inline std::vector<RolloutGroup> dynamic_filter(std::vector<RolloutGroup> groups) {
  std::vector<RolloutGroup> kept;
  kept.reserve(groups.size());
  for (auto& g : groups) {
    if (has_variance(g.shaped_rewards)) kept.push_back(std::move(g));
  }
  return kept;
}

// ---------------------------------------------------------------------------
// KL diagnostic
// ---------------------------------------------------------------------------

/// rho - 1 - ln rho with rho = pi_ref / pi_theta, from log-probabilities.
/// Nonnegative; its expectation under pi_theta is KL(pi_theta || pi_ref).
inline double kl_token_estimate(double logp, double logp_ref) {
  const double log_rho = logp_ref - logp;
  return std::max(0.0, std::expm1(log_rho) - log_rho);
}

template <DifferentiablePolicy Policy>
double kl_estimate(const Policy& policy, const PolicyParams& params, const PolicyParams& params_ref,
                   std::span<const RolloutGroup> groups) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& g : groups) {
    for (const auto& traj : g.trajectories) {
      const auto lp = policy.token_logprobs(params, g.input, traj.tokens);
      const auto lp_ref = policy.token_logprobs(params_ref, g.input, traj.tokens);
      for (std::size_t t = 0; t < lp.size(); ++t) total += kl_token_estimate(lp[t], lp_ref[t]);
      tokens += lp.size();
    }
  }
  return tokens ? total / static_cast<double>(tokens) : 0.0;
}

// ---------------------------------------------------------------------------
// Clipped surrogate
// ---------------------------------------------------------------------------

namespace detail {

struct ClipTerm {
  double value;
  /// Derivative with respect to the token log-probability.
  double dlogp;
  bool clipped;
};

inline ClipTerm clipped_surrogate(double ratio, double advantage, double lo, double hi) {
  const double unclipped = ratio * advantage;
  const double clipped = std::clamp(ratio, lo, hi) * advantage;
  const bool active = (advantage > 0.0 && ratio > hi) || (advantage < 0.0 && ratio < lo);
  if (active) return {clipped, 0.0, true};
  return {std::min(unclipped, clipped), unclipped, false};
}

/// Adds coef * sum_t [surrogate_t - beta * kl_t] and its gradient for one
/// trajectory. `advantages` holds one value per token.
template <DifferentiablePolicy Policy>
void accumulate_trajectory(const Policy& policy, const PolicyParams& params, const PolicyInput& input,
                           const Trajectory& traj, std::span<const double> advantages, double lo, double hi,
                           double coef, double beta, const PolicyParams* params_ref, ObjectiveResult& out) {
  if (traj.logprobs_old.size() != traj.tokens.size()) {
    throw ConfigError("trajectory: logprobs_old length does not match tokens");
  }
  const auto lp = policy.token_logprobs(params, input, traj.tokens);
  std::vector<double> lp_ref;
  if (beta > 0.0) {
    if (!params_ref) throw ConfigError("objective: beta > 0 requires reference parameters");
    lp_ref = policy.token_logprobs(*params_ref, input, traj.tokens);
  }
  std::vector<double> weights(lp.size(), 0.0);
  for (std::size_t t = 0; t < lp.size(); ++t) {
    const double ratio = std::exp(lp[t] - traj.logprobs_old[t]);
    const ClipTerm term = clipped_surrogate(ratio, advantages[t], lo, hi);
    out.value += coef * term.value;
    weights[t] = coef * term.dlogp;
    if (term.clipped) ++out.clipped_tokens;
    if (beta > 0.0) {
      // d/dlogp (rho - 1 - ln rho) = 1 - rho
      const double rho = std::exp(lp_ref[t] - lp[t]);
      out.value -= coef * beta * kl_token_estimate(lp[t], lp_ref[t]);
      weights[t] -= coef * beta * (1.0 - rho);
    }
  }
  out.tokens += lp.size();
  const auto g = policy.grad_weighted_logprob(params, input, traj.tokens, weights);
  for (std::size_t i = 0; i < g.size(); ++i) out.gradient[i] += g[i];
}

inline void require_advantages(const RolloutGroup& g) {
  if (g.trajectories.size() < 2) throw ConfigError("group '" + g.instance_id() + "': need G >= 2 trajectories");
  if (g.advantages.size() != g.trajectories.size()) {
    throw ConfigError("group '" + g.instance_id() + "': advantages missing (run group_normalize first)");
  }
}

}  // namespace detail

/// Mean over groups of (1/G) sum_i (1/|y_i|) sum_t [clipped surrogate - beta KL].
/// `params_ref` is only read when beta > 0.
template <DifferentiablePolicy Policy>
ObjectiveResult grpo_objective(const Policy& policy, std::span<const RolloutGroup> groups, const PolicyParams& params,
                               const ObjectiveConfig& config, const PolicyParams* params_ref = nullptr) {
  ObjectiveResult out;
  out.gradient.assign(static_cast<std::size_t>(policy.feature_dim()), 0.0);
  if (groups.empty()) return out;
  const double num_groups = static_cast<double>(groups.size());
  for (const auto& g : groups) {
    detail::require_advantages(g);
    const double G = static_cast<double>(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto& traj = g.trajectories[i];
      if (traj.tokens.empty()) continue;
      const double coef = 1.0 / (num_groups * G * static_cast<double>(traj.length()));
      const std::vector<double> adv(traj.length(), g.advantages[i]);
      detail::accumulate_trajectory(policy, params, g.input, traj, adv, 1.0 - config.eps, 1.0 + config.eps, coef,
                                    config.beta, params_ref, out);
    }
  }
  return out;
}

/// Token-level aggregation: per group, one sum over every token of every
/// trajectory divided by the group's total token count; then the mean over
/// groups. Clip range is [1 - eps_low, 1 + eps_high].
template <DifferentiablePolicy Policy>
ObjectiveResult dapo_objective(const Policy& policy, std::span<const RolloutGroup> groups, const PolicyParams& params,
                               const ObjectiveConfig& config) {
  ObjectiveResult out;
  out.gradient.assign(static_cast<std::size_t>(policy.feature_dim()), 0.0);
  if (groups.empty()) return out;
  const double num_groups = static_cast<double>(groups.size());
  for (const auto& g : groups) {
    detail::require_advantages(g);
    if (!has_variance(g.shaped_rewards)) {
      throw TrainingError("dapo_objective: group '" + g.instance_id() +
                          "' has zero reward variance (dynamic_filter must run first)");
    }
    std::size_t group_tokens = 0;
    for (const auto& traj : g.trajectories) group_tokens += traj.length();
    if (group_tokens == 0) continue;
    const double coef = 1.0 / (num_groups * static_cast<double>(group_tokens));
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto& traj = g.trajectories[i];
      const std::vector<double> adv(traj.length(), g.advantages[i]);
      detail::accumulate_trajectory(policy, params, g.input, traj, adv, 1.0 - config.eps_low, 1.0 + config.eps_high,
                                    coef, 0.0, nullptr, out);
    }
  }
  return out;
}

/// (1/|y|) sum_t min(r_t A_t, clip(r_t, 1 - eps, 1 + eps) A_t) for a single
/// trajectory with externally supplied per-token advantages.
template <DifferentiablePolicy Policy>
ObjectiveResult ppo_objective(const Policy& policy, const PolicyInput& input, const Trajectory& traj,
                              std::span<const double> advantages, const PolicyParams& params, double eps) {
  if (advantages.size() != traj.length()) {
    throw ConfigError("ppo_objective: " + std::to_string(advantages.size()) + " advantages for " +
                      std::to_string(traj.length()) + " tokens");
  }
  if (!(eps > 0.0)) throw ConfigError("ppo_objective: eps must be > 0");
  ObjectiveResult out;
  out.gradient.assign(static_cast<std::size_t>(policy.feature_dim()), 0.0);
  if (traj.tokens.empty()) return out;
  const double coef = 1.0 / static_cast<double>(traj.length());
  detail::accumulate_trajectory(policy, params, input, traj, advantages, 1.0 - eps, 1.0 + eps, coef, 0.0, nullptr, out);
  return out;
}

/// Dispatches on config.algorithm over a batch of groups. PPO broadcasts each
/// trajectory's group advantage to its tokens and averages over trajectories.
template <DifferentiablePolicy Policy>
ObjectiveResult batch_objective(const Policy& policy, std::span<const RolloutGroup> groups, const PolicyParams& params,
                                const ObjectiveConfig& config, const PolicyParams* params_ref = nullptr) {
  switch (config.algorithm) {
    case Algorithm::grpo:
      return grpo_objective(policy, groups, params, config, params_ref);
    case Algorithm::dapo:
      return dapo_objective(policy, groups, params, config);
    case Algorithm::ppo: {
      ObjectiveResult out;
      out.gradient.assign(static_cast<std::size_t>(policy.feature_dim()), 0.0);
      std::size_t count = 0;
      for (const auto& g : groups) count += g.size();
      if (count == 0) return out;
      for (const auto& g : groups) {
        detail::require_advantages(g);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const auto& traj = g.trajectories[i];
          const std::vector<double> adv(traj.length(), g.advantages[i]);
          auto r = ppo_objective(policy, g.input, traj, adv, params, config.eps);
          const double w = 1.0 / static_cast<double>(count);
          out.value += w * r.value;
          axpy(w, r.gradient, out.gradient);
          out.tokens += r.tokens;
          out.clipped_tokens += r.clipped_tokens;
        }
      }
      return out;
    }
  }
  throw ConfigError("batch_objective: unknown algorithm");
}

}  // namespace ctxrl
