#pragma once

// KernelSHAP: Monte Carlo estimation of Shapley values by fitting the
// efficiency-constrained least squares model to subsets drawn from the
// Shapley kernel, with optional complement pairing and standard-error based
// stopping.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "shapkit/attribution.hpp"
#include "shapkit/game.hpp"

namespace shapkit {

struct KernelShapConfig {
  std::size_t batch_size = 64;  // subsets per checkpoint (batch_size / 2 pairs when paired)
  bool paired = true;
  double threshold = 0.1;
  std::size_t max_evaluations = 100000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TraceRecord {
  std::size_t evaluations = 0;
  std::vector<double> phi;
  std::vector<double> std_error;
  double ratio = 0.0;  // max std_error / (max phi - min phi)
  bool converged = false;
};

struct EstimateTrace {
  std::vector<TraceRecord> records;

  // evaluations,phi_0..phi_{d-1},stderr_0..stderr_{d-1},converged
  std::string to_csv() const;
};

struct KernelShapResult {
  Attribution attribution;
  EstimateTrace trace;
  bool converged = false;
  std::size_t evaluations = 0;  // includes v(0) and v(1)
};

KernelShapResult kernelshap(const Game& game, std::size_t y, const KernelShapConfig& config);

// Convergence statistic; 0 when every standard error is 0, infinite when
// the attribution range is 0 but some standard error is not.
double convergence_ratio(const std::vector<double>& phi, const std::vector<double>& std_error);

}  // namespace shapkit
