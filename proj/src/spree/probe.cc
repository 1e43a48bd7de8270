#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "popalign/common/csv.h"
#include "popalign/common/error.h"
#include "popalign/spree/spree.h"

namespace popalign::spree {

namespace {

// Newton iterations on mean log-loss + ridge/2 ||w||^2 (intercept free).
Eigen::VectorXd FitLogistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double ridge) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Eigen::MatrixXd xa(n, d + 1);
  xa.leftCols(d) = x;
  xa.col(d).setOnes();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d + 1);
  Eigen::MatrixXd reg = Eigen::MatrixXd::Identity(d + 1, d + 1) * ridge;
  reg(d, d) = 1e-10;
  for (int iter = 0; iter < 100; ++iter) {
    const Eigen::VectorXd z = xa * w;
    Eigen::VectorXd p(n), wt(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p(i) = 1.0 / (1.0 + std::exp(-z(i)));
      wt(i) = std::max(p(i) * (1.0 - p(i)), 1e-12);
    }
    Eigen::VectorXd grad = xa.transpose() * (p - y) / static_cast<double>(n) + reg * w;
    Eigen::MatrixXd hess = xa.transpose() * wt.asDiagonal() * xa / static_cast<double>(n) + reg;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    if (!step.allFinite()) break;
    w -= step;
    if (step.lpNorm<Eigen::Infinity>() < 1e-10) break;
  }
  return w;
}

}  // namespace

double TrainProbe(const Eigen::MatrixXd& plus, const Eigen::MatrixXd& minus, double holdout_frac,
                  std::uint64_t seed, double ridge) {
  if (plus.rows() == 0 || minus.rows() == 0) throw DataError("probe needs both classes");
  if (plus.cols() != minus.cols()) throw ConfigError("probe classes differ in dimension");
  if (!(holdout_frac > 0.0 && holdout_frac < 1.0)) throw ConfigError("holdout_frac must lie in (0, 1)");
  const Eigen::Index n = plus.rows() + minus.rows(), d = plus.cols();
  Eigen::MatrixXd x(n, d);
  x.topRows(plus.rows()) = plus;
  x.bottomRows(minus.rows()) = minus;
  Eigen::VectorXd y(n);
  y.head(plus.rows()).setOnes();
  y.tail(minus.rows()).setZero();

  const auto holdout = static_cast<Eigen::Index>(std::llround(holdout_frac * static_cast<double>(n)));
  if (holdout < 1 || holdout >= n) throw DataError("too few activations for the probe split");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::mt19937_64 rng(seed);
  bool ok = false;
  for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double held_pos = 0.0, train_pos = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) (k < holdout ? held_pos : train_pos) += y(order[k]);
    ok = held_pos > 0 && held_pos < holdout && train_pos > 0 && train_pos < n - holdout;
  }
  if (!ok) throw DataError("could not draw a probe split with both classes on each side");

  const Eigen::Index m = n - holdout;
  Eigen::MatrixXd xt(m, d);
  Eigen::VectorXd yt(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    xt.row(k) = x.row(order[holdout + k]);
    yt(k) = y(order[holdout + k]);
  }
  const Eigen::RowVectorXd mean = xt.colwise().mean();
  xt.rowwise() -= mean;
  const Eigen::VectorXd w = FitLogistic(xt, yt, ridge);
  std::int64_t correct = 0;
  for (Eigen::Index k = 0; k < holdout; ++k) {
    const Eigen::RowVectorXd row = x.row(order[k]) - mean;
    const double z = row.dot(w.head(d)) + w(d);
    correct += ((z > 0.0) == (y(order[k]) > 0.5)) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(holdout);
}

double ProbeGrid::At(int position, int level) const {
  for (const auto& c : cells) {
    if (c.position == position && c.level == level) return c.accuracy;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

ProbeGrid ComputeProbeGrid(const ActivationBank& plus, const ActivationBank& minus, double holdout_frac,
                           std::uint64_t seed) {
  if (plus.levels != minus.levels || plus.positions != minus.positions) {
    throw ConfigError("activation banks have different layouts");
  }
  ProbeGrid grid;
  for (int l = 0; l < plus.levels; ++l) {
    for (int t = 0; t < plus.positions; ++t) {
      if (!plus.has(l, t) || !minus.has(l, t)) continue;
      const double acc = TrainProbe(plus.cell(l, t).cast<double>(), minus.cell(l, t).cast<double>(),
                                    holdout_frac, seed + static_cast<std::uint64_t>(l * plus.positions + t));
      grid.cells.push_back({t, l, acc});
    }
  }
  return grid;
}

Site SelectSite(const ProbeGrid& grid) {
  if (grid.cells.empty()) throw ConfigError("probe grid is empty");
  const ProbeCell* best = &grid.cells.front();
  for (const auto& c : grid.cells) {
    const bool better =
        c.accuracy > best->accuracy ||
        (c.accuracy == best->accuracy &&
         (c.level > best->level || (c.level == best->level && c.position > best->position)));
    if (better) best = &c;
  }
  return {best->position, best->level};
}

void WriteProbeGridCsv(const std::string& path, const ProbeGrid& grid,
                       const std::vector<std::string>& preamble) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& c : grid.cells) {
    rows.push_back({std::to_string(c.position), std::to_string(c.level), FormatNumber(c.accuracy)});
  }
  CsvWriter::WriteWithPreamble(path, preamble, {"t", "level", "accuracy"}, rows);
}

}  // namespace popalign::spree
