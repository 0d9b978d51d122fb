#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "shapkit/tensor.hpp"

namespace shapkit {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// base * (1 + cos(pi * fraction)) / 2, fraction clamped to [0, 1].
double cosine_learning_rate(double base, double fraction);

// AdamW with decoupled weight decay and a cosine-annealed learning rate.
// Owns the first/second moment buffers for a fixed list of parameters.
class AdamW {
 public:
  AdamW(std::vector<tk::Tensor> params, AdamWConfig config);

  // One update using explicitly supplied gradients (one buffer per
  // parameter, same order and sizes as the parameter list).
  void step(std::span<const std::vector<double>> grads, double step_fraction);
  // One update using the gradients accumulated on the parameters.
  void step(double step_fraction);

  void zero_grad();

  std::size_t steps() const { return steps_; }
  const AdamWConfig& config() const { return config_; }
  const std::vector<tk::Tensor>& params() const { return params_; }

 private:
  std::vector<tk::Tensor> params_;
  AdamWConfig config_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::size_t steps_ = 0;
};

}  // namespace shapkit
