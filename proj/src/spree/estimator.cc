#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "popalign/common/error.h"
#include "popalign/metrics/metrics.h"
#include "popalign/spree/spree.h"

namespace popalign::spree {

double MeasureUserBias(const metrics::PopularityDist& hist, const metrics::PopularityDist& recs) {
  return metrics::MedianBias(hist, recs);
}

double BiasEstimator::Predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  double z = intercept;
  if (weights.size() > 0) {
    if (x.size() != weights.size()) throw ConfigError("estimator input has the wrong dimension");
    z += x.dot(weights.transpose());
  }
  if (!std::isfinite(z)) return 0.0;
  return std::clamp(z, -0.5, 0.5);
}

std::vector<double> DefaultL1Grid() {
  std::vector<double> grid;
  for (int k = 0; k <= 12; ++k) grid.push_back(std::pow(10.0, -4.0 + 3.0 * k / 12.0));
  return grid;
}

LassoModel FitLasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double alpha, int max_iterations,
                    double tolerance) {
  const Eigen::Index n = x.rows(), d = x.cols();
  if (n == 0 || y.size() != n) throw ConfigError("lasso needs matching, non-empty inputs");
  if (alpha < 0.0) throw ConfigError("lasso penalty must be >= 0");
  const Eigen::RowVectorXd xm = x.colwise().mean();
  const double ym = y.mean();
  const Eigen::MatrixXd xc = x.rowwise() - xm;
  Eigen::VectorXd r = y.array() - ym;
  const Eigen::VectorXd z = xc.colwise().squaredNorm().transpose() / static_cast<double>(n);
  LassoModel model;
  model.weights = Eigen::VectorXd::Zero(d);
  for (int iter = 0; iter < max_iterations; ++iter) {
    double max_delta = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (z(j) <= 1e-300) continue;
      const double old = model.weights(j);
      const double rho = xc.col(j).dot(r) / static_cast<double>(n) + z(j) * old;
      const double mag = std::max(std::abs(rho) - alpha, 0.0);
      const double next = std::copysign(mag, rho) / z(j);
      if (next != old) {
        r -= xc.col(j) * (next - old);
        model.weights(j) = next;
        max_delta = std::max(max_delta, std::abs(next - old) * std::sqrt(z(j)));
      }
    }
    model.iterations = iter + 1;
    if (max_delta < tolerance) break;
  }
  model.intercept = ym - xm.dot(model.weights.transpose());
  return model;
}

namespace {

double ClampedMse(const LassoModel& m, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                  const std::vector<Eigen::Index>& rows) {
  double sse = 0.0;
  for (Eigen::Index r : rows) {
    const double p = std::clamp(m.intercept + x.row(r).dot(m.weights.transpose()), -0.5, 0.5);
    sse += (y(r) - p) * (y(r) - p);
  }
  return sse / static_cast<double>(rows.size());
}

Eigen::MatrixXd Rows(const Eigen::MatrixXd& x, const std::vector<Eigen::Index>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = x.row(rows[k]);
  return out;
}

Eigen::VectorXd Rows(const Eigen::VectorXd& y, const std::vector<Eigen::Index>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out(static_cast<Eigen::Index>(k)) = y(rows[k]);
  return out;
}

}  // namespace

EstimatorFit FitBiasEstimator(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets,
                              const std::vector<double>& l1_grid, int folds, std::uint64_t seed,
                              double holdout_frac) {
  const Eigen::Index n = features.rows();
  if (n < 10) throw DataError("bias estimator needs at least 10 users, got " + std::to_string(n));
  if (targets.size() != n) throw ConfigError("features and targets differ in row count");
  if (!features.allFinite() || !targets.allFinite()) throw DataError("non-finite estimator inputs");
  if (l1_grid.empty()) throw ConfigError("l1 grid is empty");
  if (folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
  if (!(holdout_frac > 0.0 && holdout_frac < 1.0)) throw ConfigError("holdout_frac must lie in (0, 1)");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto held = std::clamp<Eigen::Index>(
      static_cast<Eigen::Index>(std::llround(holdout_frac * static_cast<double>(n))), 2, n - 5);
  std::vector<Eigen::Index> held_rows(order.begin(), order.begin() + held);
  std::vector<Eigen::Index> fit_rows(order.begin() + held, order.end());

  const Eigen::MatrixXd xf = Rows(features, fit_rows);
  const Eigen::VectorXd yf = Rows(targets, fit_rows);
  const int k = std::min<int>(folds, static_cast<int>(fit_rows.size()));

  EstimatorFit result;
  result.train_users = static_cast<std::int64_t>(fit_rows.size());
  result.heldout_users = static_cast<std::int64_t>(held_rows.size());
  double best_mse = std::numeric_limits<double>::infinity();
  double best_alpha = l1_grid.back();
  for (double alpha : l1_grid) {
    double total = 0.0;
    for (int f = 0; f < k; ++f) {
      std::vector<Eigen::Index> train, valid;
      for (Eigen::Index r = 0; r < xf.rows(); ++r) (r % k == f ? valid : train).push_back(r);
      const LassoModel m = FitLasso(Rows(xf, train), Rows(yf, train), alpha);
      total += ClampedMse(m, xf, yf, valid) * static_cast<double>(valid.size());
    }
    const double mse = total / static_cast<double>(xf.rows());
    if (std::isfinite(mse) && mse <= best_mse) {
      if (mse < best_mse || alpha > best_alpha) best_alpha = alpha;
      best_mse = mse;
    }
  }
  result.cv_mse = best_mse;

  LassoModel model = FitLasso(xf, yf, best_alpha);
  if (!model.weights.allFinite() || !std::isfinite(model.intercept)) {
    model.weights = Eigen::VectorXd::Zero(features.cols());
    model.intercept = yf.mean();
  }
  result.intercept_only = (model.weights.array() == 0.0).all();
  result.estimator.weights = model.weights;
  result.estimator.intercept = model.intercept;
  result.estimator.l1_penalty = best_alpha;

  double sse = 0.0, sst = 0.0, mean = 0.0;
  for (Eigen::Index r : held_rows) mean += targets(r);
  mean /= static_cast<double>(held_rows.size());
  for (Eigen::Index r : held_rows) {
    const double p = result.estimator.Predict(features.row(r));
    sse += (targets(r) - p) * (targets(r) - p);
    sst += (targets(r) - mean) * (targets(r) - mean);
  }
  result.heldout_mse = sse / static_cast<double>(held_rows.size());
  result.heldout_r2 = sst > 0.0 ? 1.0 - sse / sst : 0.0;
  return result;
}

}  // namespace popalign::spree
