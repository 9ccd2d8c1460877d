// Copyright 2026 The ctxrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one JSON document covering data generation, sampling,
// objective, curriculum, SFT and judge settings. Unknown keys are rejected so
// typos surface before any work starts.

#pragma once

#include <fstream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "ctxrl/common.hpp"
#include "ctxrl/corpus.hpp"
#include "ctxrl/curriculum.hpp"
#include "ctxrl/objectives.hpp"
#include "ctxrl/optim.hpp"
#include "ctxrl/policy.hpp"
#include "ctxrl/rewards.hpp"
#include "ctxrl/sft.hpp"
#include "ctxrl/trainer.hpp"

namespace ctxrl {

struct RunConfig {
  std::uint64_t seed = 0;
  int workers = 1;
  SynthConfig synth;
  TrainConfig train;
  /// Sampling used by `eval` and `passk`.
  SamplingConfig eval_sampling{0.7, 0.95, 8, false, 0};
  SftConfig sft;
  JudgeBackend judge;
  /// Write a checkpoint every N training steps (0 disables periodic ones).
  int checkpoint_every = 0;

  ToyCodec codec() const { return ToyCodec(synth.num_keys, synth.num_values); }

  /// Propagates the top-level seed and worker count into nested configs.
  void apply_seed(std::uint64_t s) {
    seed = s;
    synth.seed = s;
    train.seed = s;
    sft.seed = s;
    eval_sampling.seed = s;
  }

  void validate() const {
    synth.validate();
    train.validate();
    eval_sampling.validate();
    sft.validate();
    judge.validate();
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  }
};

namespace detail {

class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <class T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong type");
    }
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline void read_sampling(const nlohmann::json& j, const std::string& where, SamplingConfig& s) {
  ConfigReader r(j, where);
  r.read("temperature", s.temperature);
  r.read("top_p", s.top_p);
  r.read("max_output_len", s.max_output_len);
  r.read("greedy", s.greedy);
  r.finish();
}

inline nlohmann::ordered_json sampling_json(const SamplingConfig& s) {
  return {{"temperature", s.temperature}, {"top_p", s.top_p}, {"max_output_len", s.max_output_len}, {"greedy", s.greedy}};
}

inline JudgeKind judge_kind_from_string(const std::string& s) {
  if (s == "mock") return JudgeKind::mock;
  if (s == "http") return JudgeKind::http;
  if (s == "none") return JudgeKind::none;
  throw ConfigError("judge.kind: unknown backend '" + s + "' (expected mock, http or none)");
}

inline std::string to_string(JudgeKind k) {
  switch (k) {
    case JudgeKind::mock: return "mock";
    case JudgeKind::http: return "http";
    case JudgeKind::none: return "none";
  }
  return "?";
}

}  // namespace detail

/// Parses a run configuration. Missing keys keep their defaults; the shaping
/// cache zone defaults to a tenth of l_max.
inline RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig cfg;
  detail::ConfigReader top(j, "config");
  std::uint64_t seed = 0;
  top.read("seed", seed);
  top.read("workers", cfg.workers);

  if (const auto* s = top.child("synth")) {
    detail::ConfigReader r(*s, "synth");
    r.read("num_instances", cfg.synth.num_instances);
    r.read("num_keys", cfg.synth.num_keys);
    r.read("num_values", cfg.synth.num_values);
    r.read("length_range", cfg.synth.length_range);
    r.read("distractor_rate", cfg.synth.distractor_rate);
    r.finish();
  }
  if (const auto* s = top.child("sampling")) detail::read_sampling(*s, "sampling", cfg.train.sampling);
  if (const auto* s = top.child("eval_sampling")) detail::read_sampling(*s, "eval_sampling", cfg.eval_sampling);
  if (const auto* s = top.child("objective")) {
    detail::ConfigReader r(*s, "objective");
    std::string algo = to_string(cfg.train.objective.algorithm);
    r.read("algorithm", algo);
    cfg.train.objective.algorithm = algorithm_from_string(algo);
    r.read("eps", cfg.train.objective.eps);
    r.read("eps_low", cfg.train.objective.eps_low);
    r.read("eps_high", cfg.train.objective.eps_high);
    r.read("beta", cfg.train.objective.beta);
    r.finish();
  }
  bool cache_set = false;
  cfg.train.shaping.l_max = cfg.train.sampling.max_output_len;
  if (const auto* s = top.child("shaping")) {
    detail::ConfigReader r(*s, "shaping");
    r.read("l_max", cfg.train.shaping.l_max);
    cache_set = s->contains("l_cache");
    r.read("l_cache", cfg.train.shaping.l_cache);
    r.finish();
  }
  if (!cache_set) cfg.train.shaping = ShapingConfig::with_default_cache(cfg.train.shaping.l_max);
  if (const auto* s = top.child("curriculum")) {
    detail::ConfigReader r(*s, "curriculum");
    r.read("thresholds", cfg.train.plan.thresholds);
    r.read("steps_per_phase", cfg.train.plan.steps_per_phase);
    r.read("retro_fraction", cfg.train.plan.retro_fraction);
    r.finish();
  }
  if (const auto* s = top.child("train")) {
    detail::ConfigReader r(*s, "train");
    r.read("group_size", cfg.train.objective.group_size);
    r.read("batch_size", cfg.train.batch_size);
    r.read("mini_batch_size", cfg.train.mini_batch_size);
    r.read("learning_rate", cfg.train.learning_rate);
    r.read("total_steps", cfg.train.total_steps);
    std::string opt = to_string(cfg.train.optimizer.kind);
    r.read("optimizer", opt);
    cfg.train.optimizer.kind = optimizer_from_string(opt);
    r.read("max_resample", cfg.train.max_resample);
    r.read("checkpoint_every", cfg.checkpoint_every);
    r.finish();
  }
  if (const auto* s = top.child("sft")) {
    detail::ConfigReader r(*s, "sft");
    r.read("epochs", cfg.sft.epochs);
    r.read("batch_size", cfg.sft.batch_size);
    r.read("learning_rate", cfg.sft.learning_rate);
    std::string opt = to_string(cfg.sft.optimizer.kind);
    r.read("optimizer", opt);
    cfg.sft.optimizer.kind = optimizer_from_string(opt);
    r.finish();
  }
  if (const auto* s = top.child("judge")) {
    detail::ConfigReader r(*s, "judge");
    std::string kind = detail::to_string(cfg.judge.kind);
    r.read("kind", kind);
    cfg.judge.kind = detail::judge_kind_from_string(kind);
    r.read("timeout_s", cfg.judge.timeout_s);
    r.read("max_retries", cfg.judge.max_retries);
    r.read("backoff_ms", cfg.judge.backoff_ms);
    r.read("cache", cfg.judge.cache_enabled);
    r.read("cache_file", cfg.judge.cache_file);
    r.read("max_parallel", cfg.judge.max_parallel);
    r.finish();
  }
  top.finish();
  cfg.apply_seed(seed);
  cfg.train.workers = cfg.workers;
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": not valid JSON (" + e.what() + ")");
  }
  return parse_run_config(j);
}

/// Fully resolved configuration, echoed into each run's output directory.
/// Credentials are never written.
inline nlohmann::ordered_json run_config_json(const RunConfig& c) {
  const auto& t = c.train;
  return {
      {"seed", c.seed},
      {"workers", c.workers},
      {"synth",
       {{"num_instances", c.synth.num_instances},
        {"num_keys", c.synth.num_keys},
        {"num_values", c.synth.num_values},
        {"length_range", {c.synth.length_range.first, c.synth.length_range.second}},
        {"distractor_rate", c.synth.distractor_rate}}},
      {"sampling", detail::sampling_json(t.sampling)},
      {"eval_sampling", detail::sampling_json(c.eval_sampling)},
      {"objective",
       {{"algorithm", to_string(t.objective.algorithm)},
        {"eps", t.objective.eps},
        {"eps_low", t.objective.eps_low},
        {"eps_high", t.objective.eps_high},
        {"beta", t.objective.beta}}},
      {"shaping", {{"l_max", t.shaping.l_max}, {"l_cache", t.shaping.l_cache}}},
      {"curriculum",
       {{"thresholds", t.plan.thresholds}, {"steps_per_phase", t.plan.steps_per_phase}, {"retro_fraction", t.plan.retro_fraction}}},
      {"train",
       {{"group_size", t.objective.group_size},
        {"batch_size", t.batch_size},
        {"mini_batch_size", t.mini_batch_size},
        {"learning_rate", t.learning_rate},
        {"total_steps", t.total_steps},
        {"optimizer", to_string(t.optimizer.kind)},
        {"max_resample", t.max_resample},
        {"checkpoint_every", c.checkpoint_every}}},
      {"sft",
       {{"epochs", c.sft.epochs},
        {"batch_size", c.sft.batch_size},
        {"learning_rate", c.sft.learning_rate},
        {"optimizer", to_string(c.sft.optimizer.kind)}}},
      {"judge",
       {{"kind", detail::to_string(c.judge.kind)},
        {"model", c.judge.kind == JudgeKind::http ? c.judge.model : std::string("mock-judge")},
        {"timeout_s", c.judge.timeout_s},
        {"max_retries", c.judge.max_retries},
        {"backoff_ms", c.judge.backoff_ms},
        {"cache", c.judge.cache_enabled},
        {"cache_file", c.judge.cache_file},
        {"max_parallel", c.judge.max_parallel}}},
  };
}

}  // namespace ctxrl
