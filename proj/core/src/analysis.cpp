#include "shapkit/analysis.hpp"

#include <cmath>

#include "shapkit/errors.hpp"
#include "shapkit/sampling.hpp"

namespace shapkit {

double harmonic(std::size_t n) {
  if (n < 1) throw UsageError("harmonic(n) needs n >= 1");
  double total = 0.0;
  for (std::size_t k = n; k >= 1; --k) total += 1.0 / static_cast<double>(k);
  return total;
}

double strong_convexity_mu(std::size_t d) {
  if (d < 2) throw UsageError("strong convexity constant needs d >= 2");
  return 1.0 / harmonic(d - 1);
}

double kernel_lambda_min(std::size_t d) {
  if (d < 2) throw UsageError("lambda_min needs d >= 2");
  return 1.0 / (2.0 * harmonic(d - 1));
}

SecondMoment second_moment_analytic(std::size_t d) {
  if (d < 2) throw UsageError("second moment matrix needs d >= 2");
  const auto dist = SubsetDistribution::shapley_kernel(d);
  const double dd = static_cast<double>(d);
  double diag = 0.0;
  double off = 0.0;
  for (std::size_t k = 1; k < d; ++k) {
    const double kk = static_cast<double>(k);
    diag += dist.cardinality_mass(k) * kk / dd;
    off += dist.cardinality_mass(k) * kk * (kk - 1.0) / (dd * (dd - 1.0));
  }
  SecondMoment out;
  out.d = d;
  out.matrix.assign(d * d, off);
  out.std_error.assign(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) out.matrix[i * d + i] = diag;
  out.lambda_min = diag - off;
  return out;
}

SecondMoment second_moment_monte_carlo(std::size_t d, std::size_t samples, Rng& rng) {
  if (d < 2) throw UsageError("second moment matrix needs d >= 2");
  if (samples < 2) throw UsageError("Monte Carlo second moment needs at least 2 samples");
  const auto dist = SubsetDistribution::shapley_kernel(d);
  const double dd = static_cast<double>(d);
  std::vector<double> counts(d * d, 0.0);
  double lambda_sum = 0.0;
  double lambda_sq = 0.0;
  for (std::size_t t = 0; t < samples; ++t) {
    const Subset s = dist.draw(rng);
    const auto idx = s.indices();
    for (std::size_t i : idx) {
      for (std::size_t j : idx) counts[i * d + j] += 1.0;
    }
    const double k = static_cast<double>(idx.size());
    const double lambda = k / dd - k * (k - 1.0) / (dd * (dd - 1.0));
    lambda_sum += lambda;
    lambda_sq += lambda * lambda;
  }
  const double n = static_cast<double>(samples);
  SecondMoment out;
  out.d = d;
  out.matrix.resize(d * d);
  out.std_error.resize(d * d);
  for (std::size_t e = 0; e < d * d; ++e) {
    // Entries are means of 0/1 indicators.
    const double p = counts[e] / n;
    out.matrix[e] = p;
    out.std_error[e] = std::sqrt(p * (1.0 - p) / (n - 1.0));
  }
  const double mean = lambda_sum / n;
  out.lambda_min = mean;
  out.lambda_min_std_error = std::sqrt(std::max(0.0, (lambda_sq - n * mean * mean) / (n - 1.0)) / n);
  return out;
}

BoundValue theorem1_bound(double loss, double optimal_loss, std::size_t d) {
  if (d < 2) throw UsageError("theorem1_bound needs d >= 2");
  BoundValue out;
  double gap = loss - optimal_loss;
  if (gap < 0.0) {
    gap = 0.0;
    out.clamped = true;
  }
  out.bound = std::sqrt(2.0 * harmonic(d - 1) * gap);
  return out;
}

std::pair<double, double> tuple_loss(std::span<const std::vector<double>> phi,
                                     std::span<const ResidualTuple> tuples) {
  if (tuples.empty()) throw UsageError("tuple_loss: no tuples");
  double sum = 0.0;
  double sq = 0.0;
  for (const auto& t : tuples) {
    if (t.example >= phi.size()) throw UsageError("tuple_loss: example index out of range");
    const auto& p = phi[t.example];
    if (p.size() != t.subset.players()) throw UsageError("tuple_loss: dimension mismatch");
    double pred = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (t.subset[i]) pred += p[i];
    }
    const double r = (t.target - pred) * (t.target - pred);
    sum += r;
    sq += r * r;
  }
  const double n = static_cast<double>(tuples.size());
  const double mean = sum / n;
  const double var = tuples.size() > 1 ? std::max(0.0, (sq - n * mean * mean) / (n - 1.0)) : 0.0;
  return {mean, std::sqrt(var / n)};
}

SveReport empirical_sve(std::span<const std::vector<double>> predicted,
                        std::span<const std::vector<double>> exact,
                        std::span<const ResidualTuple> tuples) {
  if (predicted.empty() || predicted.size() != exact.size()) {
    throw UsageError("empirical_sve: need matching, non-empty predicted and exact sets");
  }
  const std::size_t d = predicted.front().size();
  SveReport report;
  for (std::size_t e = 0; e < predicted.size(); ++e) {
    if (predicted[e].size() != d || exact[e].size() != d) {
      throw UsageError("empirical_sve: dimension mismatch");
    }
    double sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double diff = predicted[e][i] - exact[e][i];
      sq += diff * diff;
    }
    report.sve += std::sqrt(sq);
  }
  report.sve /= static_cast<double>(predicted.size());

  const auto [l_hat, l_se] = tuple_loss(predicted, tuples);
  const auto [l_star, l_star_se] = tuple_loss(exact, tuples);
  (void)l_star_se;
  report.l_hat = l_hat;
  report.l_star_hat = l_star;
  report.l_hat_std_error = l_se;
  report.slack = 3.0 * l_se;
  const auto bound = theorem1_bound(l_hat, l_star, d);
  report.bound = bound.bound;
  report.clamped = bound.clamped;
  report.bound_with_slack = theorem1_bound(l_hat + report.slack, l_star, d).bound;
  report.pass = report.sve <= report.bound_with_slack;
  return report;
}

nlohmann::json SveReport::to_json() const {
  return {{"sve", sve},
          {"l_hat", l_hat},
          {"l_star_hat", l_star_hat},
          {"l_hat_std_error", l_hat_std_error},
          {"bound", bound},
          {"slack", slack},
          {"bound_with_slack", bound_with_slack},
          {"clamped", clamped},
          {"pass", pass}};
}

}  // namespace shapkit
