#include "shapkit/kernelshap.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Dense>

#include "shapkit/errors.hpp"
#include "shapkit/rng.hpp"
#include "shapkit/sampling.hpp"

namespace shapkit {

void KernelShapConfig::validate() const {
  if (batch_size == 0) throw UsageError("kernelshap: batch size must be positive");
  if (paired && batch_size % 2 != 0) throw UsageError("kernelshap: paired batch size must be even");
  if (!(threshold > 0.0)) throw UsageError("kernelshap: threshold must be positive");
  if (max_evaluations < batch_size + 2) {
    throw UsageError("kernelshap: max evaluations must cover at least one batch");
  }
}

double convergence_ratio(const std::vector<double>& phi, const std::vector<double>& std_error) {
  const double top = *std::max_element(std_error.begin(), std_error.end());
  const auto [lo, hi] = std::minmax_element(phi.begin(), phi.end());
  const double range = *hi - *lo;
  if (top == 0.0) return 0.0;
  if (range == 0.0) return std::numeric_limits<double>::infinity();
  return top / range;
}

std::string EstimateTrace::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  const std::size_t d = records.empty() ? 0 : records.front().phi.size();
  out << "evaluations";
  for (std::size_t i = 0; i < d; ++i) out << ",phi_" << i;
  for (std::size_t i = 0; i < d; ++i) out << ",stderr_" << i;
  out << ",converged\n";
  for (const auto& r : records) {
    out << r.evaluations;
    for (double v : r.phi) out << ',' << v;
    for (double v : r.std_error) out << ',' << v;
    out << ',' << (r.converged ? 1 : 0) << '\n';
  }
  return out.str();
}

KernelShapResult kernelshap(const Game& game, std::size_t y, const KernelShapConfig& config) {
  config.validate();
  const std::size_t d = game.players();
  if (d < 2) throw UsageError("kernelshap needs at least two players");
  if (y >= game.classes()) throw UsageError("kernelshap: class out of range");

  const auto dist = SubsetDistribution::shapley_kernel(d);
  Rng rng(config.seed);
  const auto [grand, null] = game.grand_and_null(y);
  const double total = grand - null;

  // Each sampling unit (a subset, or a subset with its complement) adds
  // its own s s^T and s (v(s) - v(0)), averaged within the unit.
  Eigen::MatrixXd a_sum = Eigen::MatrixXd::Zero(d, d);
  std::vector<Eigen::VectorXd> units;
  Eigen::VectorXd b_sum = Eigen::VectorXd::Zero(d);

  KernelShapResult result;
  result.evaluations = 2;
  std::vector<double> phi(d, total / static_cast<double>(d));
  std::vector<double> se(d, std::numeric_limits<double>::infinity());

  while (result.evaluations + config.batch_size <= config.max_evaluations) {
    std::vector<Subset> batch;
    batch.reserve(config.batch_size);
    if (config.paired) {
      for (auto& [s, c] : dist.paired_sample(rng, config.batch_size / 2)) {
        batch.push_back(std::move(s));
        batch.push_back(std::move(c));
      }
    } else {
      batch = dist.sample(rng, config.batch_size);
    }
    const auto values = game.evaluate_batch(batch, y);
    result.evaluations += batch.size();

    const std::size_t per_unit = config.paired ? 2 : 1;
    const double unit_weight = 1.0 / static_cast<double>(per_unit);
    for (std::size_t u = 0; u < batch.size(); u += per_unit) {
      Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
      for (std::size_t k = u; k < u + per_unit; ++k) {
        const auto idx = batch[k].indices();
        const double target = values[k] - null;
        for (std::size_t i : idx) {
          b(i) += unit_weight * target;
          for (std::size_t j : idx) a_sum(i, j) += unit_weight;
        }
      }
      b_sum += b;
      units.push_back(std::move(b));
    }

    const double n = static_cast<double>(units.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(d + 1, d + 1);
    kkt.topLeftCorner(d, d) = a_sum / n;
    kkt.block(0, d, d, 1).setOnes();
    kkt.block(d, 0, 1, d).setOnes();
    const Eigen::MatrixXd inverse = kkt.completeOrthogonalDecomposition().pseudoInverse();
    const Eigen::MatrixXd projector = inverse.topLeftCorner(d, d);
    const Eigen::VectorXd b_mean = b_sum / n;
    const Eigen::VectorXd solution = projector * b_mean + inverse.block(0, d, d, 1) * total;

    // Delta-method covariance: phi is affine in the mean of the unit
    // vectors b, so Cov(phi) = M Cov(b) M^T / n.
    Eigen::MatrixXd cov_b = Eigen::MatrixXd::Zero(d, d);
    for (const auto& b : units) {
      const Eigen::VectorXd c = b - b_mean;
      cov_b.noalias() += c * c.transpose();
    }
    if (units.size() > 1) cov_b /= (n - 1.0);
    const Eigen::MatrixXd cov_phi = projector * cov_b * projector.transpose() / n;

    TraceRecord record;
    record.evaluations = result.evaluations;
    record.phi.resize(d);
    record.std_error.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
      record.phi[i] = solution(i);
      record.std_error[i] = std::sqrt(std::max(0.0, cov_phi(i, i)));
    }
    // Rescale so efficiency holds to rounding regardless of the solve.
    double sum = 0.0;
    for (double v : record.phi) sum += v;
    const double shift = (total - sum) / static_cast<double>(d);
    for (double& v : record.phi) v += shift;
    if (!std::all_of(record.phi.begin(), record.phi.end(), [](double v) { return std::isfinite(v); })) {
      throw NumericalError("kernelshap produced a non-finite estimate");
    }
    record.ratio = convergence_ratio(record.phi, record.std_error);
    record.converged = units.size() > 1 && record.ratio < config.threshold;
    phi = record.phi;
    se = record.std_error;
    result.converged = record.converged;
    result.trace.records.push_back(std::move(record));
    if (result.converged) break;
  }

  double sum = 0.0;
  for (double v : phi) sum += v;
  result.attribution.values = phi;
  result.attribution.class_index = y;
  result.attribution.method = "kernelshap";
  result.attribution.efficiency_gap = std::abs(sum - total);
  return result;
}

}  // namespace shapkit
