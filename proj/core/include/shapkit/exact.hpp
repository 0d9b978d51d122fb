#pragma once

// Exact Shapley values by exhaustive enumeration, two independent routes:
// the marginal-contribution sum and the efficiency-constrained weighted
// least squares characterization.

#include <cstddef>
#include <span>
#include <vector>

#include "shapkit/attribution.hpp"
#include "shapkit/game.hpp"

namespace shapkit {

inline constexpr std::size_t kMaxExactPlayers = 20;

// phi_i = (1/d) sum_{s : s_i = 0} C(d-1, |s|)^{-1} (v(s + e_i) - v(s)).
Attribution shapley_enumeration(const Game& game, std::size_t y);
// Every class from a single sweep over the 2^d subsets.
std::vector<Attribution> shapley_enumeration_all(const Game& game);

// argmin sum_{0<|s|<d} w(|s|) (v(s) - v(0) - s^T phi)^2
// s.t. 1^T phi = v(1) - v(0), w(k) = (d-1) / (C(d,k) k (d-k)),
// solved through the KKT system.
Attribution shapley_wls(const Game& game, std::size_t y);

// Table-level routes: `table[code]` is v(s_code) for one class.
std::vector<double> shapley_from_table(std::span<const double> table, std::size_t players);
struct WlsSolution {
  std::vector<double> phi;
  double condition_number = 0.0;
  double objective = 0.0;  // weighted residual sum at the optimum
};
WlsSolution shapley_wls_from_table(std::span<const double> table, std::size_t players);

// Weighted least-squares objective sum_{0<|s|<d} p_Sh(s) (v(s) - v(0) - s^T phi)^2
// with the normalized Shapley kernel, i.e. the expected explainer loss of
// phi under exhaustive enumeration.
double shapley_kernel_loss(std::span<const double> table, std::size_t players,
                           std::span<const double> phi);

// Values of one class for every subset, in code order.
std::vector<double> class_table(const Game& game, std::size_t y);

}  // namespace shapkit
