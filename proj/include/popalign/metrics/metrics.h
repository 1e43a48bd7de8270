#pragma once

#include <numbers>
#include <cstdint>
#include <span>
#include <vector>

#include "popalign/metrics/popularity_dist.h"

namespace popalign::metrics {

// ---------------------------------------------------------------------------
// Absolute popularity of recommendations.

double Arp(const PopularityDist& recs);

// Mean of ln(max(s, 1)). `clamped`, when given, is incremented once per
// value that had to be raised to 1.
double Alrp(const PopularityDist& recs, std::size_t* clamped = nullptr);

// ---------------------------------------------------------------------------
// Concentration of recommendation frequency. All take the full-catalog
// recommendation counts s_hat, zeros included.

double Coverage(std::int64_t recommended_item_count, std::int64_t catalog_size);
double ShannonEntropy(std::span<const std::int64_t> s_hat);
double Hhi(std::span<const std::int64_t> s_hat);
double Gini(std::span<const std::int64_t> s_hat);

// ---------------------------------------------------------------------------
// History vs. recommendations for one user.

double PopLift(const PopularityDist& hist, const PopularityDist& recs);
double LogPopDiff(const PopularityDist& hist, const PopularityDist& recs,
                  std::size_t* clamped = nullptr);
// Jensen-Shannon divergence between the 3-bin histograms; `log_base` of e
// gives the range [0, ln 2].
double Upd(const PopularityDist& hist, const PopularityDist& recs, const UpdBins& bins,
           double log_base = std::numbers::e);

// ---------------------------------------------------------------------------
// Quantile calibration.

// Generalized inverse of the empirical CDF: the smallest member s with
// count(<= s) / n >= tau. tau = 0 yields the minimum.
double EmpiricalQuantile(const PopularityDist& dist, double tau);

// Fraction of the history with popularity <= threshold.
double TauHat(const PopularityDist& hist, double threshold);

CalibrationCurve ComputeCalibrationCurve(const PopularityDist& hist, const PopularityDist& recs,
                                         const QuantileGrid& grid);

// Mean squared deviation of the curve from the diagonal, in [0, 1].
double PceUser(const PopularityDist& hist, const PopularityDist& recs, const QuantileGrid& grid);
double PceFromCurve(const CalibrationCurve& curve);
double PceGlobal(std::span<const double> per_user);

// e(u) = tau_hat at the recommendations' median minus 0.5, in [-0.5, 0.5].
// Positive: recommendations more popular than the history.
double MedianBias(const PopularityDist& hist, const PopularityDist& recs);

}  // namespace popalign::metrics
