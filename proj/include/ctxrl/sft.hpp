// Copyright 2026 The ctxrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Warm-up supervised fine-tuning on demonstrations.

#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "ctxrl/common.hpp"
#include "ctxrl/corpus.hpp"
#include "ctxrl/curriculum.hpp"
#include "ctxrl/optim.hpp"
#include "ctxrl/policy.hpp"

namespace ctxrl {

struct Demonstration {
  Instance instance;
  PolicyInput input;
  std::vector<TokenId> gold_output;
};

/// Gold output for the synthetic task: answer marker, answer tokens, eos.
inline Demonstration make_demonstration(const ToyCodec& codec, const Instance& inst) {
  std::vector<TokenId> out{codec.answer_marker()};
  for (TokenId t : codec.encode(inst.gold_answer)) out.push_back(t);
  out.push_back(codec.eos());
  return {inst, encode_input(codec, inst), std::move(out)};
}

inline Demonstration make_demonstration(const ToyCodec& codec, const Instance& inst, std::vector<TokenId> output) {
  if (output.empty()) throw DataError("demonstration '" + inst.id + "': empty output");
  for (TokenId t : output) codec.word(t);
  return {inst, encode_input(codec, inst), std::move(output)};
}

/// Demonstrations for every instance inside the first curriculum phase.
inline std::vector<Demonstration> build_sft_set(const ToyCodec& codec, const std::vector<Instance>& dataset,
                                                const PhasePlan& plan) {
  std::vector<Demonstration> demos;
  for (const auto& inst : dataset) {
    if (assign_phase(inst, plan) == std::optional<std::size_t>{1}) demos.push_back(make_demonstration(codec, inst));
  }
  return demos;
}

// Demonstration file: dataset record plus an "output" field of codec words.

inline void write_demonstrations(const std::string& path, const ToyCodec& codec, const std::vector<Demonstration>& demos) {
  auto out = detail::open_for_write(path);
  for (const auto& d : demos) {
    auto rec = instance_to_json(d.instance);
    rec["output"] = codec.decode(d.gold_output);
    out << rec.dump() << '\n';
  }
}

inline std::vector<Demonstration> load_demonstrations(const std::string& path, const ToyCodec& codec) {
  std::vector<Demonstration> demos;
  std::unordered_set<std::string> seen;
  detail::for_each_json_line(path, [&](const nlohmann::json& rec, std::size_t line_no) {
    try {
      auto id = detail::require_string_field(rec, "id", line_no);
      if (!seen.insert(id).second) throw DataError("line " + std::to_string(line_no) + ": duplicate id '" + id + "'");
      auto inst = make_instance(codec, id, detail::require_string_field(rec, "context", line_no),
                                detail::require_string_field(rec, "question", line_no),
                                detail::require_string_field(rec, "answer", line_no));
      demos.push_back(make_demonstration(codec, inst, codec.encode(detail::require_string_field(rec, "output", line_no))));
    } catch (const DataError& e) {
      const std::string msg = e.what();
      throw DataError(path + ": " + (msg.rfind("line ", 0) == 0 ? msg : "line " + std::to_string(line_no) + ": " + msg));
    }
  });
  return demos;
}

struct SftLoss {
  double loss = 0.0;
  /// Gradient of the loss (descend along its negative).
  std::vector<double> gradient;
};

/// Per-token mean negative log-likelihood of the gold output.
template <DifferentiablePolicy Policy>
SftLoss sft_loss(const Policy& policy, const PolicyParams& params, const Demonstration& demo) {
  if (demo.gold_output.empty()) throw DataError("sft_loss: empty gold output");
  const auto lp = policy.token_logprobs(params, demo.input, demo.gold_output);
  const double n = static_cast<double>(lp.size());
  SftLoss out;
  for (double l : lp) out.loss -= l;
  out.loss /= n;
  const std::vector<double> unit(lp.size(), 1.0);
  out.gradient = policy.grad_weighted_logprob(params, demo.input, demo.gold_output, unit);
  for (double& g : out.gradient) g *= -1.0 / n;
  return out;
}

template <DifferentiablePolicy Policy>
double mean_sft_loss(const Policy& policy, const PolicyParams& params, const std::vector<Demonstration>& demos) {
  double total = 0.0;
  for (const auto& d : demos) total += sft_loss(policy, params, d).loss;
  return demos.empty() ? 0.0 : total / static_cast<double>(demos.size());
}

struct SftConfig {
  int epochs = 20;
  int batch_size = 16;
  double learning_rate = 0.05;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 0) throw ConfigError("sft: epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("sft: batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("sft: learning_rate must be >= 0");
    optimizer.validate();
  }
};

struct SftResult {
  PolicyParams params;
  double initial_loss = 0.0;
  /// Full-dataset mean loss after each epoch.
  std::vector<double> epoch_losses;
};

/// Mini-batch descent on the batch-mean loss. Batch order is reshuffled each
/// epoch from the seed.
template <DifferentiablePolicy Policy>
SftResult train_sft(const Policy& policy, PolicyParams init, const std::vector<Demonstration>& dataset,
                    const SftConfig& config) {
  config.validate();
  if (dataset.empty()) throw ConfigError("train_sft: empty dataset");
  SftResult result;
  result.params = std::move(init);
  result.initial_loss = mean_sft_loss(policy, result.params, dataset);
  Optimizer opt(config.optimizer, config.learning_rate, result.params.weights.size());
  std::vector<std::size_t> order(dataset.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.seed, {0x5f7, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<double> grad(result.params.weights.size(), 0.0);
      const double inv = 1.0 / static_cast<double>(end - start);
      for (std::size_t j = start; j < end; ++j) {
        const auto l = sft_loss(policy, result.params, dataset[order[j]]);
        axpy(inv, l.gradient, grad);
      }
      // Optimizer ascends; the loss gradient is negated.
      for (double& g : grad) g = -g;
      opt.step(result.params.weights, grad);
    }
    result.epoch_losses.push_back(mean_sft_loss(policy, result.params, dataset));
  }
  return result;
}

}  // namespace ctxrl
