// Copyright 2026 The ctxrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. `run` is kept in a header so tests can drive it
// in-process; tools/ctxrl.cpp only forwards argv.

#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ctxrl/common.hpp"
#include "ctxrl/config.hpp"
#include "ctxrl/corpus.hpp"
#include "ctxrl/curriculum.hpp"
#include "ctxrl/evalharness.hpp"
#include "ctxrl/judge_http.hpp"
#include "ctxrl/policy.hpp"
#include "ctxrl/rewards.hpp"
#include "ctxrl/sft.hpp"
#include "ctxrl/trainer.hpp"

namespace ctxrl::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kConfig = 2,
  kIo = 3,
  kJudge = 4,
  kTraining = 5,
};

namespace fs = std::filesystem;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

struct GenDataOptions {
  std::string out;
  std::string demos;
};

struct SftOptions {
  std::string data;
  std::string demos;
  std::string init;
  std::string out;
};

struct TrainOptions {
  std::string data;
  std::string init;
  std::string out;
  std::optional<int> steps;
};

struct EvalOptions {
  std::string checkpoint;
  std::string data;
  std::string judge;
  std::string out;
  bool greedy = false;
};

struct PasskOptions {
  std::string checkpoint;
  std::string data;
  std::string judge;
  std::string out;
  int samples = 16;
  std::vector<int> ks{1, 2, 4, 8, 16};
  std::optional<int> n;
  std::optional<int> c;
};

struct ExportOptions {
  std::string trace;
  std::string out;
  std::string format = "csv";
};

namespace detail {

inline RunConfig resolve_config(const CommonOptions& common) {
  RunConfig cfg = common.config.empty() ? RunConfig{} : load_run_config(common.config);
  if (common.config.empty()) cfg.train.shaping = ShapingConfig::with_default_cache(cfg.train.sampling.max_output_len);
  if (common.seed) cfg.apply_seed(*common.seed);
  if (common.workers) {
    cfg.workers = *common.workers;
    cfg.train.workers = *common.workers;
  }
  cfg.judge.load_env();
  cfg.validate();
  return cfg;
}

inline void require_file(const std::string& path, const char* what) {
  std::error_code ec;
  if (path.empty() || !fs::is_regular_file(path, ec)) throw IoError(std::string(what) + " '" + path + "' not found");
}

/// Refuses an output path whose parent directory does not exist.
inline void require_parent_dir(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  std::error_code ec;
  if (!parent.empty() && !fs::is_directory(parent, ec)) {
    throw IoError("output directory '" + parent.string() + "' does not exist");
  }
}

inline void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

inline void write_resolved_config(const fs::path& dir, const RunConfig& cfg) {
  auto out = ctxrl::detail::open_for_write((dir / "resolved_config.json").string());
  out << run_config_json(cfg).dump(2) << '\n';
}

/// Reads a checkpoint and checks it against the codec it will be used with.
inline PolicyParams load_params(const std::string& path, const ToyCodec& codec) {
  require_file(path, "checkpoint");
  auto ck = read_checkpoint(path);
  if (ck.codec_hash != codec.hash()) {
    throw ConfigError("checkpoint '" + path + "' was written for a different vocabulary (codec hash " + ck.codec_hash +
                      ", expected " + codec.hash() + ")");
  }
  const LinearSoftmaxPolicy policy(codec);
  if (ck.params.feature_dim != policy.feature_dim()) throw ConfigError("checkpoint '" + path + "': feature_dim mismatch");
  return std::move(ck.params);
}

/// Recovers the codec from a checkpoint by matching its hash against every
/// key/value split of the vocabulary.
inline ToyCodec codec_for_checkpoint(const Checkpoint& ck) {
  const int words = ck.params.vocab_size - 2;
  for (int keys = 1; keys < words; ++keys) {
    ToyCodec codec(keys, words - keys);
    if (codec.hash() == ck.codec_hash) return codec;
  }
  throw ConfigError("checkpoint vocabulary does not match any key/value codec");
}

inline std::shared_ptr<JudgeClient> make_judge(JudgeBackend backend, const std::string& override_kind) {
  if (!override_kind.empty()) backend.kind = ctxrl::detail::judge_kind_from_string(override_kind);
  backend.validate();
  auto client = make_judge_client(backend);
  if (client && backend.cache_enabled && !backend.cache_file.empty() && fs::exists(backend.cache_file)) {
    client->load_cache(backend.cache_file);
  }
  return client;
}

inline void save_judge_cache(const JudgeBackend& backend, const std::shared_ptr<JudgeClient>& client) {
  if (client && backend.cache_enabled && !backend.cache_file.empty()) client->save_cache(backend.cache_file);
}

struct EvalSetup {
  RunConfig cfg;
  ToyCodec codec{1, 1};
  PolicyParams params;
  std::vector<Instance> dataset;
  std::shared_ptr<JudgeClient> judge;
};

/// Shared validation for `eval` and `passk`. The codec comes from the config
/// when one is given, otherwise from the checkpoint itself.
inline EvalSetup prepare_eval(const CommonOptions& common, const std::string& checkpoint, const std::string& data,
                              const std::string& judge_kind) {
  EvalSetup s;
  s.cfg = resolve_config(common);
  require_file(checkpoint, "checkpoint");
  require_file(data, "dataset");
  if (common.config.empty()) {
    s.codec = codec_for_checkpoint(read_checkpoint(checkpoint));
  } else {
    s.codec = s.cfg.codec();
  }
  s.params = load_params(checkpoint, s.codec);
  s.dataset = load_dataset(data, s.codec);
  if (s.dataset.empty()) throw DataError(data + ": dataset is empty");
  s.judge = make_judge(s.cfg.judge, judge_kind);
  return s;
}

}  // namespace detail

inline int cmd_gen_data(const CommonOptions& common, const GenDataOptions& opt, std::ostream& out) {
  const auto cfg = detail::resolve_config(common);
  detail::require_parent_dir(opt.out);
  if (!opt.demos.empty()) detail::require_parent_dir(opt.demos);
  const auto data = generate_synthetic(cfg.synth);
  write_dataset(opt.out, data);
  const auto codec = cfg.codec();
  std::size_t demos = 0;
  if (!opt.demos.empty()) {
    const auto set = build_sft_set(codec, data, cfg.train.plan);
    write_demonstrations(opt.demos, codec, set);
    demos = set.size();
  }
  out << "wrote " << data.size() << " instances to " << opt.out;
  if (!opt.demos.empty()) out << " and " << demos << " demonstrations to " << opt.demos;
  out << '\n';
  return kOk;
}

inline int cmd_sft(const CommonOptions& common, const SftOptions& opt, std::ostream& out) {
  const auto cfg = detail::resolve_config(common);
  const auto codec = cfg.codec();
  const LinearSoftmaxPolicy policy(codec);
  std::vector<Demonstration> demos;
  if (!opt.demos.empty()) {
    detail::require_file(opt.demos, "demonstrations");
    demos = load_demonstrations(opt.demos, codec);
  } else {
    detail::require_file(opt.data, "dataset");
    demos = build_sft_set(codec, load_dataset(opt.data, codec), cfg.train.plan);
  }
  if (demos.empty()) throw DataError("no demonstrations to train on");
  PolicyParams init = opt.init.empty() ? policy.init_params() : detail::load_params(opt.init, codec);

  const fs::path dir(opt.out);
  detail::make_dir(dir);
  detail::write_resolved_config(dir, cfg);
  const auto result = train_sft(policy, std::move(init), demos, cfg.sft);
  {
    auto losses = ctxrl::detail::open_for_write((dir / "sft_losses.jsonl").string());
    losses << nlohmann::ordered_json{{"epoch", 0}, {"loss", result.initial_loss}}.dump() << '\n';
    for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
      losses << nlohmann::ordered_json{{"epoch", e + 1}, {"loss", result.epoch_losses[e]}}.dump() << '\n';
    }
  }
  write_checkpoint((dir / "checkpoint.ckpt").string(), result.params, codec.hash());
  const double final_loss = result.epoch_losses.empty() ? result.initial_loss : result.epoch_losses.back();
  out << "sft on " << demos.size() << " demonstrations: loss " << format_double(result.initial_loss) << " -> "
      << format_double(final_loss) << '\n';
  return kOk;
}

inline int cmd_train(const CommonOptions& common, const TrainOptions& opt, std::ostream& out, std::ostream& err) {
  auto cfg = detail::resolve_config(common);
  if (opt.steps) {
    cfg.train.total_steps = *opt.steps;
    cfg.validate();
  }
  const auto codec = cfg.codec();
  const LinearSoftmaxPolicy policy(codec);
  detail::require_file(opt.data, "dataset");
  const auto dataset = load_dataset(opt.data, codec);
  const auto buckets = bucket_by_phase(dataset, cfg.train.plan);
  for (std::size_t k = 0; k < buckets.buckets.size(); ++k) {
    if (cfg.train.plan.steps_per_phase[k] > 0 && buckets.buckets[k].empty()) {
      throw ConfigError("dataset has no instances for curriculum phase " + std::to_string(k + 1));
    }
  }
  PolicyParams init = opt.init.empty() ? policy.init_params() : detail::load_params(opt.init, codec);
  auto judge = detail::make_judge(cfg.judge, "");
  const RewardSystem rewards(judge);
  if (!buckets.excluded.empty()) {
    err << "warning: " << buckets.excluded.size() << " instances exceed the last curriculum threshold and are excluded\n";
  }

  const fs::path dir(opt.out);
  const fs::path ckpt_dir = dir / "checkpoints";
  detail::make_dir(ckpt_dir);
  detail::write_resolved_config(dir, cfg);
  auto metrics = ctxrl::detail::open_for_write((dir / "metrics.jsonl").string());
  const std::string hash = codec.hash();
  auto ckpt_name = [&](const char* fmt, int n) {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, n);
    return (ckpt_dir / buf).string();
  };

  TrainHooks hooks;
  hooks.on_step = [&](const MetricsRecord& m, const PolicyParams& params) {
    metrics << metrics_line(m) << '\n';
    metrics.flush();
    if (!metrics) throw IoError("write failed for metrics trace");
    if (cfg.checkpoint_every > 0 && (m.step + 1) % cfg.checkpoint_every == 0) {
      write_checkpoint(ckpt_name("step_%06d.ckpt", m.step + 1), params, hash);
    }
  };
  hooks.on_phase_start = [&](int phase, const PolicyParams& params, const std::vector<DifficultyRecord>& pool) {
    write_checkpoint(ckpt_name("phase_%d_start.ckpt", phase), params, hash);
    if (phase > 1) write_difficulty_pool((dir / ("difficulty_phase_" + std::to_string(phase) + ".jsonl")).string(), pool);
  };
  const auto result = train_rl(policy, codec, std::move(init), dataset, cfg.train, rewards, hooks);
  write_checkpoint((dir / "final.ckpt").string(), result.params, hash);
  detail::save_judge_cache(cfg.judge, judge);
  out << "trained " << result.metrics.size() << " steps";
  if (!result.metrics.empty()) out << ", last mean_reward " << format_double(result.metrics.back().mean_reward);
  out << '\n';
  return kOk;
}

inline int cmd_eval(const CommonOptions& common, const EvalOptions& opt, std::ostream& out) {
  auto s = detail::prepare_eval(common, opt.checkpoint, opt.data, opt.judge);
  if (!opt.out.empty()) detail::require_parent_dir(opt.out);
  SamplingConfig sampling = s.cfg.eval_sampling;
  if (opt.greedy) sampling.greedy = true;
  const LinearSoftmaxPolicy policy(s.codec);
  const auto report = evaluate_accuracy(policy, s.codec, s.params, s.dataset, sampling, RewardSystem(s.judge), s.cfg.workers);
  if (!opt.out.empty()) write_report(opt.out, report);
  detail::save_judge_cache(s.cfg.judge, s.judge);
  out << "accuracy " << format_double(report.accuracy) << " (" << report.records.size() << " instances";
  if (report.judge_failures) out << ", " << report.judge_failures << " judge failures";
  out << ")\n";
  return kOk;
}

inline int cmd_passk(const CommonOptions& common, const PasskOptions& opt, std::ostream& out) {
  if (opt.n || opt.c) {
    // Pure estimator mode: no model involved.
    if (!opt.n || !opt.c) throw ConfigError("passk: --n and --c go together");
    for (int k : opt.ks) out << "pass@" << k << ' ' << format_double(pass_at_k(*opt.n, *opt.c, k)) << '\n';
    return kOk;
  }
  for (int k : opt.ks) {
    if (k < 1 || k > opt.samples) throw ConfigError("passk: K=" + std::to_string(k) + " outside [1, samples]");
  }
  auto s = detail::prepare_eval(common, opt.checkpoint, opt.data, opt.judge);
  if (!opt.out.empty()) detail::require_parent_dir(opt.out);
  const LinearSoftmaxPolicy policy(s.codec);
  const RewardSystem rewards(s.judge);
  EvalReport report;
  report.num_samples = opt.samples;
  // K=1 is always computed since Pass@1 is the mean per-sample accuracy.
  std::vector<int> ks = opt.ks;
  ks.push_back(1);
  report.pass_at_k =
      evaluate_pass_at_k(policy, s.codec, s.params, s.dataset, s.cfg.eval_sampling, rewards, opt.samples, ks, s.cfg.workers);
  report.accuracy = report.pass_at_k.at(1);
  if (std::find(opt.ks.begin(), opt.ks.end(), 1) == opt.ks.end()) report.pass_at_k.erase(1);
  if (!opt.out.empty()) write_report(opt.out, report);
  detail::save_judge_cache(s.cfg.judge, s.judge);
  for (const auto& [k, v] : report.pass_at_k) out << "pass@" << k << ' ' << format_double(v) << '\n';
  return kOk;
}

inline int cmd_export(const ExportOptions& opt, std::ostream& out) {
  if (opt.format != "csv") throw ConfigError("export-metrics: unknown format '" + opt.format + "' (supported: csv)");
  detail::require_file(opt.trace, "metrics trace");
  detail::require_parent_dir(opt.out);
  export_metrics(opt.trace, opt.out, opt.format);
  out << "wrote " << opt.out << '\n';
  return kOk;
}

/// Runs one subcommand. Failures print a single "error: ..." line to `err`
/// and return a distinct exit code per failure class.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Long-context reasoning RL toolkit on a synthetic retrieval task", "ctxrl"};
  app.require_subcommand(1);
  CommonOptions common;
  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("--config", common.config, "JSON run configuration");
    if (config_required) opt->required();
    sub->add_option("--seed", common.seed, "Override the configured seed");
    sub->add_option("--workers", common.workers, "Bound on parallel rollout and judge workers");
  };

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic key-value retrieval dataset");
  add_common(gen_cmd, true);
  gen_cmd->add_option("--out", gen.out, "Dataset file (JSON lines)")->required();
  gen_cmd->add_option("--demos", gen.demos, "Also write first-phase demonstrations here");

  SftOptions sft;
  auto* sft_cmd = app.add_subcommand("sft", "Warm-up supervised fine-tuning");
  add_common(sft_cmd, true);
  auto* sft_data = sft_cmd->add_option("--data", sft.data, "Dataset; first-phase instances become demonstrations");
  auto* sft_demos = sft_cmd->add_option("--demos", sft.demos, "Demonstration file");
  sft_data->excludes(sft_demos);
  sft_cmd->add_option("--init", sft.init, "Initial checkpoint");
  sft_cmd->add_option("--out", sft.out, "Output directory")->required();

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "RL training with the curriculum schedule");
  add_common(train_cmd, true);
  train_cmd->add_option("--data", train.data, "Dataset file")->required();
  train_cmd->add_option("--init", train.init, "Initial checkpoint (e.g. from sft)");
  train_cmd->add_option("--out", train.out, "Output directory")->required();
  train_cmd->add_option("--steps", train.steps, "Cap on training steps");

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Accuracy of a checkpoint");
  add_common(eval_cmd, false);
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required();
  eval_cmd->add_option("--data", ev.data)->required();
  eval_cmd->add_option("--judge", ev.judge, "Judge backend: mock, http or none");
  eval_cmd->add_option("--out", ev.out, "Report file (JSON lines)");
  eval_cmd->add_flag("--greedy", ev.greedy, "Greedy decoding");

  PasskOptions pk;
  auto* passk_cmd = app.add_subcommand("passk", "Pass@K of a checkpoint, or the estimator alone with --n/--c");
  add_common(passk_cmd, false);
  passk_cmd->add_option("--checkpoint", pk.checkpoint);
  passk_cmd->add_option("--data", pk.data);
  passk_cmd->add_option("--judge", pk.judge, "Judge backend: mock, http or none");
  passk_cmd->add_option("--out", pk.out, "Report file (JSON lines)");
  passk_cmd->add_option("--samples", pk.samples, "Samples per instance (N)");
  passk_cmd->add_option("--k", pk.ks, "K values")->delimiter(',');
  passk_cmd->add_option("--n", pk.n, "Estimator only: sample count");
  passk_cmd->add_option("--c", pk.c, "Estimator only: correct count");

  ExportOptions ex;
  auto* export_cmd = app.add_subcommand("export-metrics", "Convert a metrics trace to a table");
  export_cmd->add_option("--trace", ex.trace)->required();
  export_cmd->add_option("--out", ex.out)->required();
  export_cmd->add_option("--format", ex.format, "Only csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(common, gen, out);
    if (sft_cmd->parsed()) {
      if (sft.data.empty() && sft.demos.empty()) throw ConfigError("sft: one of --data or --demos is required");
      return cmd_sft(common, sft, out);
    }
    if (train_cmd->parsed()) return cmd_train(common, train, out, err);
    if (eval_cmd->parsed()) return cmd_eval(common, ev, out);
    if (passk_cmd->parsed()) return cmd_passk(common, pk, out);
    if (export_cmd->parsed()) return cmd_export(ex, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const JudgeTransportError& e) {
    err << "error: judge: " << e.what() << '\n';
    return kJudge;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kTraining;
  }
  err << "error: no subcommand\n";
  return kUsage;
}

}  // namespace ctxrl::cli
