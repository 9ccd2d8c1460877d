// Copyright 2026 The ctxrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// RL training loop: rollout collection, hybrid reward, advantages, mini-batch
// updates across curriculum phases, and per-step metrics.

#pragma once

#include <cmath>
#include <functional>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxrl/common.hpp"
#include "ctxrl/corpus.hpp"
#include "ctxrl/curriculum.hpp"
#include "ctxrl/objectives.hpp"
#include "ctxrl/optim.hpp"
#include "ctxrl/policy.hpp"
#include "ctxrl/rewards.hpp"

namespace ctxrl {

struct TrainConfig {
  ObjectiveConfig objective;
  SamplingConfig sampling;
  ShapingConfig shaping = ShapingConfig::with_default_cache(8);
  PhasePlan plan;
  int batch_size = 16;
  int mini_batch_size = 4;
  double learning_rate = 1e-2;
  /// Negative means "run the whole phase plan".
  int total_steps = -1;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;
  /// Resampling attempts when dynamic filtering removes every group.
  int max_resample = 8;
  int workers = 1;

  int group_size() const { return objective.group_size; }
  int steps() const { return total_steps < 0 ? plan.total_steps() : std::min(total_steps, plan.total_steps()); }

  void validate() const {
    objective.validate();
    sampling.validate();
    plan.validate();
    optimizer.validate();
    if (objective.algorithm == Algorithm::dapo) shaping.validate();
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (mini_batch_size < 1 || batch_size % mini_batch_size != 0) {
      throw ConfigError("train: mini_batch_size must divide batch_size");
    }
    if (!(learning_rate >= 0.0)) throw ConfigError("train: learning_rate must be >= 0");
    if (max_resample < 0) throw ConfigError("train: max_resample must be >= 0");
    if (workers < 1) throw ConfigError("train: workers must be >= 1");
  }
};

struct MetricsRecord {
  int step = 0;
  /// 1-based curriculum phase.
  int phase = 1;
  double mean_reward = 0.0;
  double mean_entropy = 0.0;
  double kl_estimate = 0.0;
  double gradient_norm = 0.0;
  double clip_fraction = 0.0;
  double mean_output_length = 0.0;
  int groups_filtered = 0;

  bool operator==(const MetricsRecord&) const = default;
};

// ---------------------------------------------------------------------------
// Metrics trace I/O (one JSON record per line)
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json metrics_to_json(const MetricsRecord& m) {
  return {{"step", m.step},
          {"phase", m.phase},
          {"mean_reward", m.mean_reward},
          {"mean_entropy", m.mean_entropy},
          {"kl_estimate", m.kl_estimate},
          {"gradient_norm", m.gradient_norm},
          {"clip_fraction", m.clip_fraction},
          {"mean_output_length", m.mean_output_length},
          {"groups_filtered", m.groups_filtered}};
}

inline std::string metrics_line(const MetricsRecord& m) { return metrics_to_json(m).dump(); }

inline void write_metrics(const std::string& path, const std::vector<MetricsRecord>& trace) {
  auto out = detail::open_for_write(path);
  for (const auto& m : trace) out << metrics_line(m) << '\n';
}

inline std::vector<MetricsRecord> read_metrics(const std::string& path) {
  std::vector<MetricsRecord> trace;
  detail::for_each_json_line(path, [&](const nlohmann::json& rec, std::size_t line_no) {
    try {
      MetricsRecord m;
      m.step = rec.at("step").get<int>();
      m.phase = rec.at("phase").get<int>();
      m.mean_reward = rec.at("mean_reward").get<double>();
      m.mean_entropy = rec.at("mean_entropy").get<double>();
      m.kl_estimate = rec.at("kl_estimate").get<double>();
      m.gradient_norm = rec.at("gradient_norm").get<double>();
      m.clip_fraction = rec.at("clip_fraction").get<double>();
      m.mean_output_length = rec.at("mean_output_length").get<double>();
      m.groups_filtered = rec.value("groups_filtered", 0);
      trace.push_back(m);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ": line " + std::to_string(line_no) + ": bad metrics record (" + e.what() + ")");
    }
  });
  return trace;
}

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

/// Dataset item with its encoded policy input.
struct PreparedInstance {
  Instance instance;
  PolicyInput input;
};

inline std::vector<PreparedInstance> prepare_instances(const ToyCodec& codec, const std::vector<Instance>& dataset) {
  std::vector<PreparedInstance> out;
  out.reserve(dataset.size());
  for (const auto& inst : dataset) out.push_back({inst, encode_input(codec, inst)});
  return out;
}

struct RolloutRequest {
  int group_size = 8;
  SamplingConfig sampling;
  /// When set, shaped rewards get overlong shaping (DAPO path).
  std::optional<ShapingConfig> shaping;
  std::uint64_t seed = 0;
  int workers = 1;
};

/// G trajectories per instance from frozen `params`, scored with the hybrid
/// reward. Trajectory (i, j) uses its own RNG stream, so results do not
/// depend on the worker count.
template <DifferentiablePolicy Policy>
std::vector<RolloutGroup> collect_rollouts(const Policy& policy, const ToyCodec& codec, const PolicyParams& params,
                                           const std::vector<const PreparedInstance*>& instances,
                                           const RolloutRequest& request, const RewardSystem& rewards) {
  if (instances.empty()) throw ConfigError("collect_rollouts: no instances");
  if (request.group_size < 1) throw ConfigError("collect_rollouts: group size must be >= 1");
  request.sampling.validate();
  if (request.shaping) request.shaping->validate();
  const auto G = static_cast<std::size_t>(request.group_size);
  std::vector<RolloutGroup> groups(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    groups[i].input = instances[i]->input;
    groups[i].trajectories.resize(G);
    groups[i].rewards.resize(G);
    groups[i].shaped_rewards.resize(G);
  }
  parallel_for(instances.size() * G, static_cast<std::size_t>(request.workers), [&](std::size_t flat) {
    const std::size_t i = flat / G;
    const std::size_t j = flat % G;
    const auto& inst = instances[i]->instance;
    SamplingConfig sc = request.sampling;
    sc.seed = derive_seed(request.seed, {i, j});
    Trajectory traj = policy.sample_trajectory(params, instances[i]->input, sc);
    const auto outcome = rewards.score(inst.question, codec.render_output(traj.tokens), inst.gold_answer);
    const double r = outcome.combined;
    groups[i].rewards[j] = r;
    groups[i].shaped_rewards[j] = request.shaping ? shape_overlong(r, traj.length(), *request.shaping) : r;
    groups[i].trajectories[j] = std::move(traj);
  });
  return groups;
}

/// Fills advantages from shaped rewards (equal to raw rewards outside DAPO).
inline void normalize_advantages(std::vector<RolloutGroup>& groups) {
  for (auto& g : groups) g.advantages = group_normalize(g.shaped_rewards);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct BatchInfo {
  int step = 0;
  /// 1-based.
  int phase = 1;
  std::vector<std::string> phase_ids;
  std::vector<std::string> retro_ids;
};

struct TrainHooks {
  std::function<void(const MetricsRecord&, const PolicyParams&)> on_step;
  std::function<void(const BatchInfo&)> on_batch;
  /// Called when a phase starts (1-based) with the refreshed difficulty pool.
  std::function<void(int phase, const PolicyParams&, const std::vector<DifficultyRecord>&)> on_phase_start;
};

struct TrainResult {
  PolicyParams params;
  std::vector<MetricsRecord> metrics;
};

namespace detail {

/// Endless shuffled pass over one phase bucket.
class BucketCursor {
 public:
  BucketCursor() = default;
  BucketCursor(std::vector<std::size_t> items, std::uint64_t seed) : items_(std::move(items)), seed_(seed) { reshuffle(); }

  std::size_t next() {
    if (pos_ == order_.size()) {
      ++epoch_;
      reshuffle();
    }
    return order_[pos_++];
  }

 private:
  void reshuffle() {
    order_ = items_;
    Rng rng(derive_seed(seed_, {epoch_}));
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng.below(i)]);
    pos_ = 0;
  }

  std::vector<std::size_t> items_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::uint64_t epoch_ = 0;
  std::uint64_t seed_ = 0;
};

}  // namespace detail

template <DifferentiablePolicy Policy>
TrainResult train_rl(const Policy& policy, const ToyCodec& codec, PolicyParams init, const std::vector<Instance>& dataset,
                     const TrainConfig& config, const RewardSystem& rewards, const TrainHooks& hooks = {}) {
  config.validate();
  TrainResult result;
  result.params = std::move(init);
  const int total_steps = config.steps();
  if (total_steps == 0) return result;

  const auto prepared = prepare_instances(codec, dataset);
  const PhaseBuckets buckets = bucket_by_phase(dataset, config.plan);
  for (std::size_t k = 0; k < buckets.buckets.size(); ++k) {
    if (config.plan.steps_per_phase[k] > 0 && buckets.buckets[k].empty()) {
      throw ConfigError("train: dataset has no instances for phase " + std::to_string(k + 1));
    }
  }
  std::unordered_map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < dataset.size(); ++i) index_of.emplace(dataset[i].id, i);

  const bool dapo = config.objective.algorithm == Algorithm::dapo;
  Optimizer optimizer(config.optimizer, config.learning_rate, result.params.weights.size());
  PolicyParams reference = result.params;
  std::vector<DifficultyRecord> pool;
  detail::BucketCursor cursor;
  std::optional<std::size_t> current_phase;

  RolloutRequest request;
  request.group_size = config.group_size();
  request.sampling = config.sampling;
  if (dapo) request.shaping = config.shaping;
  request.workers = config.workers;

  for (int step = 0; step < total_steps; ++step) {
    const std::size_t phase = config.plan.phase_of_step(step);
    if (phase != current_phase) {
      current_phase = phase;
      reference = result.params;
      cursor = detail::BucketCursor(buckets.buckets[phase], derive_seed(config.seed, {0xb0c, phase}));
      pool.clear();
      if (phase > 0) {
        // Difficulty of every earlier-phase item under the phase-start policy.
        std::vector<const PreparedInstance*> prior;
        for (std::size_t k = 0; k < phase; ++k) {
          for (std::size_t idx : buckets.buckets[k]) prior.push_back(&prepared[idx]);
        }
        if (!prior.empty()) {
          RolloutRequest diff_req = request;
          diff_req.shaping.reset();
          diff_req.seed = derive_seed(config.seed, {0xd1f, phase});
          const auto groups = collect_rollouts(policy, codec, result.params, prior, diff_req, rewards);
          for (const auto& g : groups) pool.push_back(difficulty_score(g.instance_id(), g.rewards));
        }
      }
      if (hooks.on_phase_start) hooks.on_phase_start(static_cast<int>(phase) + 1, result.params, pool);
    }

    BatchInfo batch;
    batch.step = step;
    batch.phase = static_cast<int>(phase) + 1;
    std::vector<const PreparedInstance*> retro;
    if (phase > 0 && !pool.empty() && config.plan.retro_fraction > 0.0) {
      const auto n_retro = static_cast<std::size_t>(std::llround(config.plan.retro_fraction * config.batch_size));
      batch.retro_ids = retrospective_sample(pool, n_retro, derive_seed(config.seed, {0x7e7, static_cast<std::uint64_t>(step)}));
      for (const auto& id : batch.retro_ids) retro.push_back(&prepared[index_of.at(id)]);
    }
    const std::size_t n_phase = static_cast<std::size_t>(config.batch_size) - retro.size();

    MetricsRecord rec;
    rec.step = step;
    rec.phase = batch.phase;
    std::vector<RolloutGroup> groups;
    for (int attempt = 0;; ++attempt) {
      std::vector<const PreparedInstance*> members = retro;
      for (std::size_t n = 0; n < n_phase; ++n) {
        const std::size_t idx = cursor.next();
        members.push_back(&prepared[idx]);
        if (attempt == 0) batch.phase_ids.push_back(dataset[idx].id);
      }
      request.seed = derive_seed(config.seed, {0x5a3, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(attempt)});
      groups = collect_rollouts(policy, codec, result.params, members, request, rewards);

      double reward_sum = 0.0, entropy_sum = 0.0, length_sum = 0.0;
      std::size_t count = 0;
      for (const auto& g : groups) {
        for (std::size_t j = 0; j < g.size(); ++j) {
          reward_sum += g.rewards[j];
          entropy_sum += policy.trajectory_entropy(result.params, g.input, g.trajectories[j].tokens);
          length_sum += static_cast<double>(g.trajectories[j].length());
          ++count;
        }
      }
      rec.mean_reward = reward_sum / static_cast<double>(count);
      rec.mean_entropy = entropy_sum / static_cast<double>(count);
      rec.mean_output_length = length_sum / static_cast<double>(count);
      rec.kl_estimate = kl_estimate(policy, result.params, reference, groups);

      if (!dapo) break;
      const std::size_t before = groups.size();
      groups = dynamic_filter(std::move(groups));
      rec.groups_filtered += static_cast<int>(before - groups.size());
      if (!groups.empty()) break;
      if (attempt >= config.max_resample) {
        throw TrainingError("step " + std::to_string(step) + ": dynamic sampling removed every group after " +
                            std::to_string(attempt + 1) + " attempts");
      }
    }
    if (hooks.on_batch) hooks.on_batch(batch);

    normalize_advantages(groups);

    // pi_old is the sampling snapshot: every mini-batch below reuses the
    // log-probabilities recorded during collection.
    double norm_sum = 0.0;
    int updates = 0;
    std::size_t tokens = 0, clipped = 0;
    const auto mini = static_cast<std::size_t>(config.mini_batch_size);
    for (std::size_t start = 0; start < groups.size(); start += mini) {
      const std::size_t len = std::min(mini, groups.size() - start);
      const std::span<const RolloutGroup> chunk(groups.data() + start, len);
      const auto obj = batch_objective(policy, chunk, result.params, config.objective, &reference);
      norm_sum += l2_norm(obj.gradient);
      tokens += obj.tokens;
      clipped += obj.clipped_tokens;
      ++updates;
      optimizer.step(result.params.weights, obj.gradient);
    }
    rec.gradient_norm = updates ? norm_sum / updates : 0.0;
    rec.clip_fraction = tokens ? static_cast<double>(clipped) / static_cast<double>(tokens) : 0.0;
    result.metrics.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec, result.params);
  }
  return result;
}

}  // namespace ctxrl
