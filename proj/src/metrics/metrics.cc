#include "popalign/metrics/metrics.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "popalign/common/error.h"

namespace popalign::metrics {
namespace {

void RequireNonEmpty(const PopularityDist& d, const char* what) {
  if (d.empty()) throw DataError(std::string(what) + ": empty popularity distribution");
}

double MeanLogClamped(const PopularityDist& d, std::size_t* clamped) {
  double sum = 0.0;
  for (double v : d.sorted()) {
    if (v < 1.0) {
      if (clamped) ++*clamped;
      continue;  // log(1) = 0
    }
    sum += std::log(v);
  }
  return sum / static_cast<double>(d.size());
}

double TotalMass(std::span<const std::int64_t> s_hat, const char* what) {
  double total = 0.0;
  for (auto v : s_hat) {
    if (v < 0) throw DataError(std::string(what) + ": negative recommendation count");
    total += static_cast<double>(v);
  }
  if (!(total > 0.0)) throw DataError(std::string(what) + ": no recommendations recorded");
  return total;
}

std::array<double, 3> BinHistogram(const PopularityDist& d, const UpdBins& bins) {
  std::array<double, 3> h{0.0, 0.0, 0.0};
  for (double v : d.sorted()) h[bins.BinOf(v)] += 1.0;
  for (double& x : h) x /= static_cast<double>(d.size());
  return h;
}

}  // namespace

double Arp(const PopularityDist& recs) {
  RequireNonEmpty(recs, "ARP");
  return recs.Mean();
}

double Alrp(const PopularityDist& recs, std::size_t* clamped) {
  RequireNonEmpty(recs, "ALRP");
  return MeanLogClamped(recs, clamped);
}

double Coverage(std::int64_t recommended_item_count, std::int64_t catalog_size) {
  if (catalog_size < 1) throw DataError("coverage: catalog is empty");
  if (recommended_item_count < 0 || recommended_item_count > catalog_size) {
    throw DataError("coverage: recommended item count outside [0, catalog size]");
  }
  return static_cast<double>(recommended_item_count) / static_cast<double>(catalog_size);
}

double ShannonEntropy(std::span<const std::int64_t> s_hat) {
  const double total = TotalMass(s_hat, "entropy");
  double h = 0.0;
  for (auto v : s_hat) {
    if (v == 0) continue;
    const double phi = static_cast<double>(v) / total;
    h -= phi * std::log(phi);
  }
  return h;
}

double Hhi(std::span<const std::int64_t> s_hat) {
  const double total = TotalMass(s_hat, "HHI");
  double h = 0.0;
  for (auto v : s_hat) {
    const double phi = static_cast<double>(v) / total;
    h += phi * phi;
  }
  return h;
}

double Gini(std::span<const std::int64_t> s_hat) {
  const double total = TotalMass(s_hat, "Gini");
  std::vector<std::int64_t> sorted(s_hat.begin(), s_hat.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    const double rank = static_cast<double>(k + 1);
    acc += (2.0 * rank - n - 1.0) * static_cast<double>(sorted[k]);
  }
  return acc / (n * total);
}

double PopLift(const PopularityDist& hist, const PopularityDist& recs) {
  RequireNonEmpty(hist, "PL");
  RequireNonEmpty(recs, "PL");
  const double h = hist.Mean();
  if (h == 0.0) throw DataError("PL: history mean popularity is zero");
  return (recs.Mean() - h) / h;
}

double LogPopDiff(const PopularityDist& hist, const PopularityDist& recs, std::size_t* clamped) {
  RequireNonEmpty(hist, "LogPopDiff");
  RequireNonEmpty(recs, "LogPopDiff");
  return MeanLogClamped(recs, clamped) - MeanLogClamped(hist, clamped);
}

double Upd(const PopularityDist& hist, const PopularityDist& recs, const UpdBins& bins,
           double log_base) {
  RequireNonEmpty(hist, "UPD");
  RequireNonEmpty(recs, "UPD");
  const auto p = BinHistogram(hist, bins);
  const auto q = BinHistogram(recs, bins);
  double jsd = 0.0;
  for (int b = 0; b < 3; ++b) {
    const double m = 0.5 * (p[b] + q[b]);
    const double tp = p[b] > 0.0 ? p[b] * std::log(p[b] / m) : 0.0;
    const double tq = q[b] > 0.0 ? q[b] * std::log(q[b] / m) : 0.0;
    jsd += 0.5 * (tp + tq);
  }
  return jsd / std::log(log_base);
}

double EmpiricalQuantile(const PopularityDist& dist, double tau) {
  RequireNonEmpty(dist, "quantile");
  if (!(tau >= 0.0 && tau <= 1.0)) throw DataError("quantile level outside [0, 1]");
  const auto& v = dist.sorted();
  const std::size_t n = v.size();
  const double nd = static_cast<double>(n);
  // Smallest k with (k + 1) / n >= tau; start from the ceiling guess and
  // correct for rounding in tau * n.
  std::size_t k = static_cast<std::size_t>(std::max(0.0, std::ceil(tau * nd) - 1.0));
  k = std::min(k, n - 1);
  while (k > 0 && static_cast<double>(k) / nd >= tau) --k;
  while (k + 1 < n && static_cast<double>(k + 1) / nd < tau) ++k;
  return v[k];
}

double TauHat(const PopularityDist& hist, double threshold) {
  RequireNonEmpty(hist, "tau_hat");
  return static_cast<double>(hist.CountAtMost(threshold)) / static_cast<double>(hist.size());
}

CalibrationCurve ComputeCalibrationCurve(const PopularityDist& hist, const PopularityDist& recs,
                                         const QuantileGrid& grid) {
  RequireNonEmpty(hist, "calibration curve");
  RequireNonEmpty(recs, "calibration curve");
  CalibrationCurve curve;
  curve.tau = grid.levels();
  curve.tau_hat.reserve(grid.size());
  for (double tau : grid.levels()) {
    curve.tau_hat.push_back(TauHat(hist, EmpiricalQuantile(recs, tau)));
  }
  return curve;
}

double PceFromCurve(const CalibrationCurve& curve) {
  if (curve.tau.empty() || curve.tau.size() != curve.tau_hat.size()) {
    throw DataError("PCE: malformed calibration curve");
  }
  double acc = 0.0;
  for (std::size_t j = 0; j < curve.tau.size(); ++j) {
    const double diff = curve.tau[j] - curve.tau_hat[j];
    acc += diff * diff;
  }
  return acc / static_cast<double>(curve.tau.size());
}

double PceUser(const PopularityDist& hist, const PopularityDist& recs, const QuantileGrid& grid) {
  return PceFromCurve(ComputeCalibrationCurve(hist, recs, grid));
}

double PceGlobal(std::span<const double> per_user) {
  if (per_user.empty()) throw DataError("PCE: no users");
  return std::accumulate(per_user.begin(), per_user.end(), 0.0) /
         static_cast<double>(per_user.size());
}

double MedianBias(const PopularityDist& hist, const PopularityDist& recs) {
  return TauHat(hist, EmpiricalQuantile(recs, 0.5)) - 0.5;
}

}  // namespace popalign::metrics
