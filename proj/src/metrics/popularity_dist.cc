#include "popalign/metrics/popularity_dist.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "popalign/common/error.h"
#include "popalign/metrics/metrics.h"

namespace popalign::metrics {

PopularityDist::PopularityDist(std::vector<double> values) : sorted_(std::move(values)) {
  for (double v : sorted_) {
    if (!std::isfinite(v)) throw NumericError("popularity values must be finite");
  }
  std::sort(sorted_.begin(), sorted_.end());
}

PopularityDist PopularityDist::FromItems(std::span<const ItemId> items,
                                         const std::vector<std::int64_t>& popularity) {
  std::vector<double> values;
  values.reserve(items.size());
  for (ItemId i : items) values.push_back(static_cast<double>(popularity.at(i)));
  return PopularityDist(std::move(values));
}

double PopularityDist::Mean() const {
  if (sorted_.empty()) throw DataError("mean of an empty popularity distribution");
  return std::accumulate(sorted_.begin(), sorted_.end(), 0.0) /
         static_cast<double>(sorted_.size());
}

std::size_t PopularityDist::CountAtMost(double x) const {
  return static_cast<std::size_t>(std::upper_bound(sorted_.begin(), sorted_.end(), x) -
                                  sorted_.begin());
}

QuantileGrid::QuantileGrid(std::vector<double> levels) : levels_(std::move(levels)) {
  if (levels_.size() < 2) throw ConfigError("quantile grid needs at least two levels");
  for (std::size_t j = 0; j < levels_.size(); ++j) {
    if (!(levels_[j] >= 0.0 && levels_[j] <= 1.0)) {
      throw ConfigError("quantile levels must lie in [0, 1]");
    }
    if (j > 0 && !(levels_[j] > levels_[j - 1])) {
      throw ConfigError("quantile levels must be strictly ascending");
    }
  }
}

QuantileGrid QuantileGrid::Uniform(int m) {
  if (m < 2) throw ConfigError("quantile grid needs at least two levels");
  std::vector<double> levels(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) levels[j] = static_cast<double>(j) / (m - 1);
  return QuantileGrid(std::move(levels));
}

UpdBins::UpdBins(double low, double medium) : low_max(low), medium_max(medium) {
  if (!(low > 0.0) || !(medium > low)) {
    throw ConfigError("UPD thresholds must be positive and strictly ascending");
  }
}

int UpdBins::BinOf(double s) const {
  if (s <= low_max) return 0;
  if (s <= medium_max) return 1;
  return 2;
}

UpdBins DefaultUpdBins(const std::vector<std::int64_t>& item_popularity, double low_pct,
                       double high_pct) {
  std::vector<double> values(item_popularity.begin(), item_popularity.end());
  const PopularityDist dist(std::move(values));
  double low = std::max(1.0, EmpiricalQuantile(dist, low_pct));
  double high = EmpiricalQuantile(dist, high_pct);
  if (high <= low) high = low + 1.0;
  return UpdBins(low, high);
}

}  // namespace popalign::metrics
