// Copyright 2026 The ctxrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Independent oracles and fixtures shared by the test binaries. Nothing here
// calls the library routine it is used to check.

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ctxrl/corpus.hpp"
#include "ctxrl/objectives.hpp"
#include "ctxrl/policy.hpp"

namespace ctxrl::testing {

inline std::string fixture_path(const std::string& name) { return std::string(CTXRL_FIXTURE_DIR) + "/" + name; }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ctxrl_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

/// Central finite differences of a scalar function.
inline std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                             std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max(std::sqrt(na), std::sqrt(nb));
  return denom == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

/// Log-softmax over the vocabulary computed from dense features in long
/// double, independent of the policy's sparse fast path.
inline std::vector<double> brute_step_logprobs(const LinearSoftmaxPolicy& policy, const PolicyParams& params,
                                               const PolicyInput& input, std::span<const TokenId> prefix) {
  const int V = policy.vocab_size();
  std::vector<long double> logits(static_cast<std::size_t>(V));
  for (int a = 0; a < V; ++a) {
    const auto phi = policy.features(input, prefix, a);
    long double l = 0.0L;
    for (std::size_t i = 0; i < phi.size(); ++i) l += static_cast<long double>(params.weights[i]) * phi[i];
    logits[static_cast<std::size_t>(a)] = l;
  }
  long double z = 0.0L;
  for (long double l : logits) z += std::exp(l);
  std::vector<double> out;
  for (long double l : logits) out.push_back(static_cast<double>(l - std::log(z)));
  return out;
}

inline std::vector<double> brute_token_logprobs(const LinearSoftmaxPolicy& policy, const PolicyParams& params,
                                                const PolicyInput& input, const std::vector<TokenId>& output) {
  std::vector<double> out;
  for (std::size_t t = 0; t < output.size(); ++t) {
    const std::span<const TokenId> prefix(output.data(), t);
    out.push_back(brute_step_logprobs(policy, params, input, prefix)[static_cast<std::size_t>(output[t])]);
  }
  return out;
}

inline PolicyParams random_params(const LinearSoftmaxPolicy& policy, std::mt19937_64& gen, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  auto p = policy.init_params();
  for (double& w : p.weights) w = n(gen);
  return p;
}

/// Small synthetic world used across the objective and policy tests.
struct ToyWorld {
  ToyCodec codec{6, 6};
  LinearSoftmaxPolicy policy{codec};
  std::vector<Instance> data;
  std::vector<PolicyInput> inputs;

  explicit ToyWorld(std::uint64_t seed = 11, int n = 12) {
    SynthConfig cfg;
    cfg.num_instances = n;
    cfg.num_keys = 6;
    cfg.num_values = 6;
    cfg.length_range = {8, 40};
    cfg.seed = seed;
    data = generate_synthetic(cfg);
    for (const auto& inst : data) inputs.push_back(encode_input(codec, inst));
  }
};

/// Rollout groups sampled from `old_params`, with random real rewards that
/// always have variance and advantages already normalized. Advantages are
/// computed here by hand, not with group_normalize.
inline std::vector<RolloutGroup> random_groups(const ToyWorld& world, const PolicyParams& old_params,
                                               std::mt19937_64& gen, int num_groups, int G, int max_len = 5) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<RolloutGroup> groups;
  for (int g = 0; g < num_groups; ++g) {
    RolloutGroup grp;
    grp.input = world.inputs[static_cast<std::size_t>(g) % world.inputs.size()];
    for (int i = 0; i < G; ++i) {
      SamplingConfig sc;
      sc.max_output_len = max_len;
      sc.seed = gen();
      grp.trajectories.push_back(world.policy.sample_trajectory(old_params, grp.input, sc));
      grp.rewards.push_back(u(gen));
    }
    grp.shaped_rewards = grp.rewards;
    double mean = 0.0;
    for (double r : grp.rewards) mean += r / G;
    double var = 0.0;
    for (double r : grp.rewards) var += (r - mean) * (r - mean) / G;
    for (double r : grp.rewards) grp.advantages.push_back((r - mean) / std::sqrt(var));
    groups.push_back(std::move(grp));
  }
  return groups;
}

/// Smallest distance of any token ratio to a clip boundary.
inline double clip_margin(const LinearSoftmaxPolicy& policy, const PolicyParams& params,
                          const std::vector<RolloutGroup>& groups, double lo, double hi) {
  double margin = 1e300;
  for (const auto& g : groups) {
    for (const auto& traj : g.trajectories) {
      const auto lp = policy.token_logprobs(params, g.input, traj.tokens);
      for (std::size_t t = 0; t < lp.size(); ++t) {
        const double r = std::exp(lp[t] - traj.logprobs_old[t]);
        margin = std::min({margin, std::abs(r - lo), std::abs(r - hi)});
      }
    }
  }
  return margin;
}

/// C(n, k) in double by the multiplicative formula.
inline double choose(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

/// Pass@K by enumerating every K-subset of N samples of which the first c are
/// correct: the fraction of subsets containing at least one correct sample.
inline double brute_pass_at_k(int N, int c, int K) {
  long long hit = 0, total = 0;
  for (std::uint32_t mask = 0; mask < (1u << N); ++mask) {
    if (std::popcount(mask) != K) continue;
    ++total;
    if (mask & ((1u << c) - 1u)) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace ctxrl::testing
