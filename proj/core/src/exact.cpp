#include "shapkit/exact.hpp"

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "shapkit/errors.hpp"
#include "shapkit/sampling.hpp"

namespace shapkit {

namespace {

void check_players(std::size_t d) {
  if (d == 0) throw UsageError("exact Shapley values need at least one player");
  if (d > kMaxExactPlayers) {
    throw CapabilityError("exact Shapley values are limited to " +
                          std::to_string(kMaxExactPlayers) + " players, got " +
                          std::to_string(d));
  }
}

std::size_t popcount(std::uint64_t v) { return static_cast<std::size_t>(__builtin_popcountll(v)); }

Attribution make_attribution(std::vector<double> phi, std::size_t y, const char* method,
                             double grand, double null) {
  Attribution a;
  double total = 0.0;
  for (double v : phi) total += v;
  a.values = std::move(phi);
  a.class_index = y;
  a.method = method;
  a.efficiency_gap = std::abs(total - (grand - null));
  return a;
}

}  // namespace

std::vector<double> class_table(const Game& game, std::size_t y) {
  const Game table = tabulate(game);
  const auto& backend = dynamic_cast<const TabularBackend&>(table.backend());
  const std::size_t k = table.classes();
  if (y >= k) throw UsageError("class out of range");
  const std::size_t n = std::size_t{1} << table.players();
  std::vector<double> out(n);
  for (std::size_t code = 0; code < n; ++code) out[code] = backend.table()[code * k + y];
  return out;
}

std::vector<double> shapley_from_table(std::span<const double> table, std::size_t players) {
  check_players(players);
  const std::size_t d = players;
  const std::size_t n = std::size_t{1} << d;
  if (table.size() != n) throw UsageError("table length must be 2^d");
  std::vector<double> weight(d);
  for (std::size_t k = 0; k < d; ++k) {
    weight[k] = std::exp(-log_binomial(d - 1, k)) / static_cast<double>(d);
  }
  std::vector<double> phi(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const std::uint64_t bit = std::uint64_t{1} << i;
    double acc = 0.0;
    for (std::uint64_t code = 0; code < n; ++code) {
      if (code & bit) continue;
      acc += weight[popcount(code)] * (table[code | bit] - table[code]);
    }
    phi[i] = acc;
  }
  return phi;
}

WlsSolution shapley_wls_from_table(std::span<const double> table, std::size_t players) {
  check_players(players);
  const std::size_t d = players;
  const std::size_t n = std::size_t{1} << d;
  if (table.size() != n) throw UsageError("table length must be 2^d");
  const double null = table[0];
  const double grand = table[n - 1];

  std::vector<double> weight(d + 1, 0.0);
  for (std::size_t k = 1; k < d; ++k) {
    const double kk = static_cast<double>(k);
    const double dd = static_cast<double>(d);
    weight[k] = (dd - 1.0) * std::exp(-log_binomial(d, k)) / (kk * (dd - kk));
  }

  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(d + 1, d + 1);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d + 1);
  std::vector<std::size_t> members;
  members.reserve(d);
  for (std::uint64_t code = 1; code + 1 < n; ++code) {
    members.clear();
    for (std::size_t i = 0; i < d; ++i) {
      if (code >> i & 1u) members.push_back(i);
    }
    const double w = weight[members.size()];
    const double target = table[code] - null;
    for (std::size_t a : members) {
      rhs(a) += w * target;
      for (std::size_t b : members) kkt(a, b) += w;
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    kkt(i, d) = 1.0;
    kkt(d, i) = 1.0;
  }
  rhs(d) = grand - null;

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(kkt);
  const auto& sv = svd.singularValues();
  const double smallest = sv(sv.size() - 1);
  WlsSolution out;
  out.condition_number = smallest > 0.0 ? sv(0) / smallest
                                        : std::numeric_limits<double>::infinity();
  if (!(smallest > 1e-14 * sv(0))) {
    throw NumericalError("singular KKT system (condition number " +
                         std::to_string(out.condition_number) + ")");
  }
  const Eigen::VectorXd solution = kkt.fullPivLu().solve(rhs);
  out.phi.assign(solution.data(), solution.data() + d);

  double objective = 0.0;
  for (std::uint64_t code = 1; code + 1 < n; ++code) {
    double pred = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      if (code >> i & 1u) pred += out.phi[i];
    }
    const double r = table[code] - null - pred;
    objective += weight[popcount(code)] * r * r;
  }
  out.objective = objective;
  return out;
}

double shapley_kernel_loss(std::span<const double> table, std::size_t players,
                           std::span<const double> phi) {
  check_players(players);
  const std::size_t d = players;
  const std::size_t n = std::size_t{1} << d;
  if (table.size() != n || phi.size() != d) throw UsageError("shapley_kernel_loss: size mismatch");
  const auto dist = SubsetDistribution::shapley_kernel(d);
  std::vector<double> pmf(d + 1, 0.0);
  for (std::size_t k = 1; k < d; ++k) {
    pmf[k] = std::exp(std::log(dist.cardinality_mass(k)) - log_binomial(d, k));
  }
  double loss = 0.0;
  for (std::uint64_t code = 1; code + 1 < n; ++code) {
    double pred = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      if (code >> i & 1u) pred += phi[i];
    }
    const double r = table[code] - table[0] - pred;
    loss += pmf[popcount(code)] * r * r;
  }
  return loss;
}

Attribution shapley_enumeration(const Game& game, std::size_t y) {
  check_players(game.players());
  const auto table = class_table(game, y);
  return make_attribution(shapley_from_table(table, game.players()), y, "exact",
                          table.back(), table.front());
}

std::vector<Attribution> shapley_enumeration_all(const Game& game) {
  check_players(game.players());
  const Game tab = tabulate(game);
  std::vector<Attribution> out;
  for (std::size_t y = 0; y < tab.classes(); ++y) {
    const auto table = class_table(tab, y);
    out.push_back(make_attribution(shapley_from_table(table, tab.players()), y, "exact",
                                   table.back(), table.front()));
  }
  return out;
}

Attribution shapley_wls(const Game& game, std::size_t y) {
  check_players(game.players());
  const auto table = class_table(game, y);
  auto solution = shapley_wls_from_table(table, game.players());
  return make_attribution(std::move(solution.phi), y, "exact_wls", table.back(), table.front());
}

}  // namespace shapkit
