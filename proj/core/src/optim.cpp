#include "shapkit/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "shapkit/errors.hpp"

namespace shapkit {

double cosine_learning_rate(double base, double fraction) {
  const double f = std::clamp(fraction, 0.0, 1.0);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * f));
}

AdamW::AdamW(std::vector<tk::Tensor> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  if (!(config_.learning_rate > 0.0) || config_.weight_decay < 0.0 ||
      !(config_.beta1 > 0.0 && config_.beta1 < 1.0) ||
      !(config_.beta2 > 0.0 && config_.beta2 < 1.0) || !(config_.epsilon > 0.0)) {
    throw UsageError("AdamW: invalid hyperparameters");
  }
  for (const auto& p : params_) {
    first_.emplace_back(p.size(), 0.0);
    second_.emplace_back(p.size(), 0.0);
  }
}

void AdamW::step(std::span<const std::vector<double>> grads, double step_fraction) {
  if (grads.size() != params_.size()) {
    throw UsageError("AdamW: expected " + std::to_string(params_.size()) +
                     " gradient buffers, got " + std::to_string(grads.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (grads[i].size() != params_[i].size()) {
      throw UsageError("AdamW: gradient " + std::to_string(i) + " has length " +
                       std::to_string(grads[i].size()) + ", parameter has " +
                       std::to_string(params_[i].size()));
    }
  }
  ++steps_;
  const double lr = cosine_learning_rate(config_.learning_rate, step_fraction);
  const double t = static_cast<double>(steps_);
  const double correction1 = 1.0 - std::pow(config_.beta1, t);
  const double correction2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto p = params_[i].mutable_data();
    auto& m = first_[i];
    auto& v = second_[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] -= lr * config_.weight_decay * p[j];
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

void AdamW::step(double step_fraction) {
  std::vector<std::vector<double>> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) grads.push_back(p.grad());
  step(grads, step_fraction);
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace shapkit
