#pragma once

// Numerical checks of the explainer theory: harmonic constants, the
// Shapley-kernel second-moment matrix and its smallest eigenvalue, the
// strong-convexity constant, and the estimation-error bound.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "shapkit/rng.hpp"
#include "shapkit/subset.hpp"

namespace shapkit {

// H_n = sum_{k=1}^n 1/k, smallest term first.
double harmonic(std::size_t n);

// 1 / H_{d-1}.
double strong_convexity_mu(std::size_t d);

struct SecondMoment {
  std::size_t d = 0;
  std::vector<double> matrix;     // d x d, row-major, E[s s^T] under p_Sh
  std::vector<double> std_error;  // entrywise, Monte Carlo only (zeros otherwise)
  double lambda_min = 0.0;        // mean diagonal minus mean off-diagonal entry
  double lambda_min_std_error = 0.0;

  double at(std::size_t i, std::size_t j) const { return matrix[i * d + j]; }
};

// Entries from the cardinality sums A_ii = sum_k p_k k / d and
// A_ij = sum_k p_k k (k - 1) / (d (d - 1)).
SecondMoment second_moment_analytic(std::size_t d);
SecondMoment second_moment_monte_carlo(std::size_t d, std::size_t samples, Rng& rng);

// Closed form 1 / (2 H_{d-1}).
double kernel_lambda_min(std::size_t d);

struct BoundValue {
  double bound = 0.0;
  bool clamped = false;  // L - L* was negative and treated as 0
};

// sqrt(2 H_{d-1} (L - L*)).
BoundValue theorem1_bound(double loss, double optimal_loss, std::size_t d);

// One sampled residual: example index, subset, and v(s) - v(0).
struct ResidualTuple {
  std::size_t example = 0;
  Subset subset;
  double target = 0.0;
};

struct SveReport {
  double sve = 0.0;  // mean over examples of ||predicted - exact||_2
  double l_hat = 0.0;
  double l_star_hat = 0.0;
  double l_hat_std_error = 0.0;
  double bound = 0.0;
  double slack = 0.0;  // 3 standard errors of l_hat
  double bound_with_slack = 0.0;
  bool clamped = false;
  bool pass = false;  // sve <= bound_with_slack

  // {sve, l_hat, l_star_hat, bound, slack, pass, ...}
  nlohmann::json to_json() const;
};

// Compares predicted attributions against exact ones. L-hat and L*-hat are
// mean squared residuals of the two attribution sets over the same tuples.
SveReport empirical_sve(std::span<const std::vector<double>> predicted,
                        std::span<const std::vector<double>> exact,
                        std::span<const ResidualTuple> tuples);

// Mean squared residual (target - s^T phi_example)^2 over the tuples, with
// its standard error.
std::pair<double, double> tuple_loss(std::span<const std::vector<double>> phi,
                                     std::span<const ResidualTuple> tuples);

}  // namespace shapkit
