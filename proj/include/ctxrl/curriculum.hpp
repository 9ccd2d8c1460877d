// Copyright 2026 The ctxrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Progressive context scaling: length-bucketed phases, difficulty scores and
// difficulty-weighted retrospective sampling from earlier phases.

#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxrl/common.hpp"
#include "ctxrl/corpus.hpp"

namespace ctxrl {

struct PhasePlan {
  /// Upper input-length bound of each phase, strictly increasing.
  std::vector<std::size_t> thresholds{128, 512};
  std::vector<int> steps_per_phase{150, 150};
  /// Share of each phase-k (k >= 2) batch drawn from earlier phases.
  double retro_fraction = 0.25;

  std::size_t num_phases() const { return thresholds.size(); }

  int total_steps() const {
    int s = 0;
    for (int n : steps_per_phase) s += n;
    return s;
  }

  void validate() const {
    if (thresholds.empty()) throw ConfigError("curriculum: need at least one phase threshold");
    if (thresholds.front() == 0) throw ConfigError("curriculum: thresholds must be positive");
    for (std::size_t k = 1; k < thresholds.size(); ++k) {
      if (thresholds[k] <= thresholds[k - 1]) throw ConfigError("curriculum: thresholds must be strictly increasing");
    }
    if (steps_per_phase.size() != thresholds.size()) {
      throw ConfigError("curriculum: steps_per_phase needs one entry per threshold");
    }
    for (int n : steps_per_phase) {
      if (n < 0) throw ConfigError("curriculum: steps_per_phase entries must be >= 0");
    }
    if (!(retro_fraction >= 0.0 && retro_fraction < 1.0)) throw ConfigError("curriculum: retro_fraction must be in [0,1)");
  }

  /// Phase (0-based) that step `step` falls in, by cumulative step budgets.
  std::size_t phase_of_step(int step) const {
    int end = 0;
    for (std::size_t k = 0; k < steps_per_phase.size(); ++k) {
      end += steps_per_phase[k];
      if (step < end) return k;
    }
    return steps_per_phase.empty() ? 0 : steps_per_phase.size() - 1;
  }
};

/// 1-based phase k with L_{k-1} < length <= L_k (L_0 = 0), or nullopt when
/// the length exceeds the last threshold.
inline std::optional<std::size_t> assign_phase(std::size_t input_length, const PhasePlan& plan) {
  std::size_t lower = 0;
  for (std::size_t k = 0; k < plan.thresholds.size(); ++k) {
    if (input_length > lower && input_length <= plan.thresholds[k]) return k + 1;
    lower = plan.thresholds[k];
  }
  return std::nullopt;
}

inline std::optional<std::size_t> assign_phase(const Instance& inst, const PhasePlan& plan) {
  return assign_phase(inst.input_length, plan);
}

struct PhaseBuckets {
  /// buckets[k] holds dataset indices for phase k + 1.
  std::vector<std::vector<std::size_t>> buckets;
  std::vector<std::size_t> excluded;
};

/// Partitions a dataset by phase; over-length items land in `excluded`.
inline PhaseBuckets bucket_by_phase(const std::vector<Instance>& dataset, const PhasePlan& plan) {
  PhaseBuckets out;
  out.buckets.resize(plan.num_phases());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (auto k = assign_phase(dataset[i], plan)) {
      out.buckets[*k - 1].push_back(i);
    } else {
      out.excluded.push_back(i);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Difficulty
// ---------------------------------------------------------------------------

struct DifficultyRecord {
  std::string instance_id;
  double mean_reward = 0.0;
  /// 1 / mean_reward; 0 for the zero-accuracy tier.
  double difficulty = 0.0;
  bool zero_accuracy = false;

  bool operator==(const DifficultyRecord&) const = default;
};

inline DifficultyRecord difficulty_score(std::string instance_id, std::span<const double> rewards) {
  if (rewards.empty()) throw ConfigError("difficulty_score: need at least one reward");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(rewards.size());
  DifficultyRecord rec{std::move(instance_id), mean, 0.0, false};
  if (mean > 0.0) {
    rec.difficulty = 1.0 / mean;
  } else {
    rec.zero_accuracy = true;
  }
  return rec;
}

/// Zero-accuracy items first (pool order, up to n), then weighted draws
/// without replacement with probability proportional to difficulty.
inline std::vector<std::string> retrospective_sample(const std::vector<DifficultyRecord>& pool, std::size_t n,
                                                     std::uint64_t seed) {
  std::vector<std::string> out;
  if (n >= pool.size()) {
    for (const auto& r : pool) out.push_back(r.instance_id);
    return out;
  }
  std::vector<const DifficultyRecord*> rest;
  for (const auto& r : pool) {
    if (r.zero_accuracy) {
      if (out.size() < n) out.push_back(r.instance_id);
    } else {
      rest.push_back(&r);
    }
  }
  Rng rng(seed);
  while (out.size() < n && !rest.empty()) {
    double total = 0.0;
    for (const auto* r : rest) total += r->difficulty;
    const double u = rng.uniform() * total;
    double cum = 0.0;
    std::size_t pick = rest.size() - 1;
    for (std::size_t i = 0; i < rest.size(); ++i) {
      cum += rest[i]->difficulty;
      if (u < cum) {
        pick = i;
        break;
      }
    }
    out.push_back(rest[pick]->instance_id);
    rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return out;
}

// Difficulty pool file: one {"id", "mean_reward"} record per line.

inline void write_difficulty_pool(const std::string& path, const std::vector<DifficultyRecord>& pool) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write difficulty pool '" + path + "'");
  for (const auto& r : pool) out << nlohmann::json{{"id", r.instance_id}, {"mean_reward", r.mean_reward}}.dump() << '\n';
}

inline std::vector<DifficultyRecord> read_difficulty_pool(const std::string& path) {
  std::vector<DifficultyRecord> pool;
  detail::for_each_json_line(path, [&](const nlohmann::json& rec, std::size_t line_no) {
    if (!rec.contains("id") || !rec["id"].is_string() || !rec.contains("mean_reward") || !rec["mean_reward"].is_number()) {
      throw DataError(path + ": line " + std::to_string(line_no) + ": expected {\"id\", \"mean_reward\"}");
    }
    const double m = rec["mean_reward"].get<double>();
    pool.push_back(difficulty_score(rec["id"].get<std::string>(), std::span<const double>(&m, 1)));
  });
  return pool;
}

}  // namespace ctxrl
