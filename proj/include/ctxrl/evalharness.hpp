// Copyright 2026 The ctxrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint evaluation: max(exact match, judge) accuracy, Pass@K and metrics
// export.

#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxrl/common.hpp"
#include "ctxrl/corpus.hpp"
#include "ctxrl/policy.hpp"
#include "ctxrl/rewards.hpp"
#include "ctxrl/trainer.hpp"

namespace ctxrl {

// ---------------------------------------------------------------------------
// Pass@K
// ---------------------------------------------------------------------------

namespace detail {

/// C(n, k) exactly; valid while the result fits 128 bits, which holds for
/// n <= 62 at any k.
inline unsigned __int128 binomial_u128(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  unsigned __int128 r = 1;
  for (std::uint64_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace detail

/// Unbiased estimator 1 - C(N - c, K) / C(N, K).
inline double pass_at_k(int num_samples, int num_correct, int k) {
  if (num_samples < 1) throw ConfigError("pass_at_k: need N >= 1");
  if (num_correct < 0 || num_correct > num_samples) throw ConfigError("pass_at_k: need 0 <= c <= N");
  if (k < 1 || k > num_samples) throw ConfigError("pass_at_k: need 1 <= K <= N");
  const int wrong = num_samples - num_correct;
  if (wrong < k) return 1.0;
  if (num_samples <= 62) {
    const auto miss = detail::binomial_u128(static_cast<std::uint64_t>(wrong), static_cast<std::uint64_t>(k));
    const auto all = detail::binomial_u128(static_cast<std::uint64_t>(num_samples), static_cast<std::uint64_t>(k));
    return 1.0 - static_cast<double>(miss) / static_cast<double>(all);
  }
  // C(N-c, K) / C(N, K) = prod_{i=N-c+1}^{N} (1 - K / i)
  long double ratio = 1.0L;
  for (int i = wrong + 1; i <= num_samples; ++i) ratio *= 1.0L - static_cast<long double>(k) / static_cast<long double>(i);
  return static_cast<double>(1.0L - ratio);
}

// ---------------------------------------------------------------------------
// Accuracy
// ---------------------------------------------------------------------------

struct EvalRecord {
  std::string id;
  std::string response;
  std::optional<std::string> prediction;
  int rule = 0;
  std::optional<int> judge;
  int final_score = 0;
  bool judge_failed = false;
  bool judge_parse_failed = false;
};

struct EvalReport {
  std::vector<EvalRecord> records;
  double accuracy = 0.0;
  /// K -> mean Pass@K over instances; filled by evaluate_pass_at_k.
  std::map<int, double> pass_at_k;
  int num_samples = 1;
  int judge_failures = 0;
};

/// One sampled response per instance; final score = max(rule, judge). A
/// judge transport failure leaves that instance rule-only and is counted.
template <DifferentiablePolicy Policy>
EvalReport evaluate_accuracy(const Policy& policy, const ToyCodec& codec, const PolicyParams& params,
                             const std::vector<Instance>& dataset, const SamplingConfig& sampling,
                             const RewardSystem& rewards, int workers = 1) {
  if (dataset.empty()) throw ConfigError("evaluate_accuracy: empty dataset");
  sampling.validate();
  EvalReport report;
  report.records.resize(dataset.size());
  parallel_for(dataset.size(), static_cast<std::size_t>(workers), [&](std::size_t i) {
    const auto& inst = dataset[i];
    SamplingConfig sc = sampling;
    sc.seed = derive_seed(sampling.seed, {0xe7a1, i});
    const auto traj = policy.sample_trajectory(params, encode_input(codec, inst), sc);
    EvalRecord rec;
    rec.id = inst.id;
    rec.response = codec.render_output(traj.tokens);
    const auto outcome = rewards.score(inst.question, rec.response, inst.gold_answer, /*tolerate_judge_failure=*/true);
    rec.prediction = outcome.extracted;
    rec.rule = outcome.rule;
    rec.judge = outcome.judge;
    rec.final_score = outcome.combined;
    rec.judge_failed = outcome.judge_failed;
    rec.judge_parse_failed = outcome.judge_parse_failed;
    report.records[i] = std::move(rec);
  });
  double total = 0.0;
  for (const auto& r : report.records) {
    total += r.final_score;
    if (r.judge_failed) ++report.judge_failures;
  }
  report.accuracy = total / static_cast<double>(report.records.size());
  return report;
}

/// Draws N responses per instance and averages the Pass@K estimate over
/// instances for every requested K.
template <DifferentiablePolicy Policy>
std::map<int, double> evaluate_pass_at_k(const Policy& policy, const ToyCodec& codec, const PolicyParams& params,
                                         const std::vector<Instance>& dataset, const SamplingConfig& sampling,
                                         const RewardSystem& rewards, int num_samples, const std::vector<int>& ks,
                                         int workers = 1) {
  if (dataset.empty()) throw ConfigError("evaluate_pass_at_k: empty dataset");
  for (int k : ks) {
    if (k < 1 || k > num_samples) throw ConfigError("evaluate_pass_at_k: K=" + std::to_string(k) + " outside [1, N]");
  }
  std::vector<int> correct(dataset.size(), 0);
  parallel_for(dataset.size(), static_cast<std::size_t>(workers), [&](std::size_t i) {
    const auto input = encode_input(codec, dataset[i]);
    for (int s = 0; s < num_samples; ++s) {
      SamplingConfig sc = sampling;
      sc.seed = derive_seed(sampling.seed, {0x9a55, i, static_cast<std::uint64_t>(s)});
      const auto traj = policy.sample_trajectory(params, input, sc);
      const auto outcome = rewards.score(dataset[i].question, codec.render_output(traj.tokens), dataset[i].gold_answer, true);
      correct[i] += outcome.combined;
    }
  });
  std::map<int, double> out;
  for (int k : ks) {
    double total = 0.0;
    for (int c : correct) total += pass_at_k(num_samples, c, k);
    out[k] = total / static_cast<double>(dataset.size());
  }
  return out;
}

/// Per-instance records then one summary record, one JSON object per line.
inline void write_report(const std::string& path, const EvalReport& report) {
  auto out = detail::open_for_write(path);
  for (const auto& r : report.records) {
    nlohmann::ordered_json rec{{"id", r.id}, {"response", r.response}};
    rec["prediction"] = r.prediction ? nlohmann::ordered_json(*r.prediction) : nlohmann::ordered_json(nullptr);
    rec["rule"] = r.rule;
    rec["judge"] = r.judge ? nlohmann::ordered_json(*r.judge) : nlohmann::ordered_json(nullptr);
    rec["final"] = r.final_score;
    rec["judge_failed"] = r.judge_failed;
    rec["judge_parse_failed"] = r.judge_parse_failed;
    out << rec.dump() << '\n';
  }
  nlohmann::ordered_json summary{{"summary", true},
                                 {"accuracy", report.accuracy},
                                 {"count", report.records.size()},
                                 {"num_samples", report.num_samples},
                                 {"judge_failures", report.judge_failures}};
  if (!report.pass_at_k.empty()) {
    nlohmann::ordered_json table = nlohmann::ordered_json::object();
    for (const auto& [k, v] : report.pass_at_k) table[std::to_string(k)] = v;
    summary["pass_at_k"] = table;
  }
  out << summary.dump() << '\n';
}

// ---------------------------------------------------------------------------
// Metrics export
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols{"step",          "phase",         "mean_reward",
                                             "mean_entropy",  "kl_estimate",   "gradient_norm",
                                             "clip_fraction", "mean_output_length"};
  return cols;
}

inline void export_metrics(const std::string& trace_path, const std::string& output_path, const std::string& format) {
  if (format != "csv") throw ConfigError("export_metrics: unknown format '" + format + "' (supported: csv)");
  const auto trace = read_metrics(trace_path);
  auto out = detail::open_for_write(output_path);
  const auto& cols = metrics_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& m : trace) {
    out << m.step << ',' << m.phase << ',' << format_double(m.mean_reward) << ',' << format_double(m.mean_entropy)
        << ',' << format_double(m.kl_estimate) << ',' << format_double(m.gradient_norm) << ','
        << format_double(m.clip_fraction) << ',' << format_double(m.mean_output_length) << '\n';
  }
  if (!out) throw IoError("write failed for '" + output_path + "'");
}

/// Parses a CSV written by export_metrics back into records (groups_filtered
/// is not exported and reads as 0).
inline std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": missing header");
  std::vector<MetricsRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != metrics_columns().size()) throw DataError(path + ": line " + std::to_string(line_no) + ": wrong column count");
    MetricsRecord m;
    m.step = static_cast<int>(parse_double(cells[0]));
    m.phase = static_cast<int>(parse_double(cells[1]));
    m.mean_reward = parse_double(cells[2]);
    m.mean_entropy = parse_double(cells[3]);
    m.kl_estimate = parse_double(cells[4]);
    m.gradient_norm = parse_double(cells[5]);
    m.clip_fraction = parse_double(cells[6]);
    m.mean_output_length = parse_double(cells[7]);
    out.push_back(m);
  }
  return out;
}

}  // namespace ctxrl
