// Copyright 2026 The ctxrl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ctxrl/common.hpp"

namespace ctxrl {

enum class OptimizerKind { adam, sga };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("optimizer: betas must be in [0,1)");
    }
    if (!(epsilon > 0.0)) throw ConfigError("optimizer: epsilon must be > 0");
  }
};

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sga" || s == "sgd") return OptimizerKind::sga;
  throw ConfigError("unknown optimizer '" + s + "' (expected adam or sga)");
}

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sga"; }

/// Gradient ascent step: params += lr * direction(grad). Callers minimizing a
/// loss pass the negated gradient.
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, double learning_rate, std::size_t dim)
      : config_(config), lr_(learning_rate), m_(dim, 0.0), v_(dim, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad) {
    if (lr_ == 0.0) return;
    if (config_.kind == OptimizerKind::sga) {
      axpy(lr_, grad, params);
      return;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grad[i];
      v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
      const double m_hat = m_[i] / bc1;
      const double v_hat = v_[i] / bc2;
      params[i] += lr_ * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }

  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  OptimizerConfig config_;
  double lr_;
  std::vector<double> m_;
  std::vector<double> v_;
  long t_ = 0;
};

}  // namespace ctxrl
