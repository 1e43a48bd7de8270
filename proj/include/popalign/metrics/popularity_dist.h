#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "popalign/common/types.h"

namespace popalign::metrics {

// Multiset of popularity values: p(s|u) from a history or q(s|u) from a
// recommendation list. Values are kept sorted ascending.
class PopularityDist {
 public:
  PopularityDist() = default;
  explicit PopularityDist(std::vector<double> values);

  // One value s(i) per occurrence of i in `items`.
  static PopularityDist FromItems(std::span<const ItemId> items,
                                  const std::vector<std::int64_t>& popularity);

  std::size_t size() const { return sorted_.size(); }
  bool empty() const { return sorted_.empty(); }
  const std::vector<double>& sorted() const { return sorted_; }

  double Mean() const;
  // Number of values <= x.
  std::size_t CountAtMost(double x) const;

 private:
  std::vector<double> sorted_;
};

// Ascending quantile levels in [0, 1], at least two.
class QuantileGrid {
 public:
  explicit QuantileGrid(std::vector<double> levels);

  // m evenly spaced levels 0, 1/(m-1), ..., 1.
  static QuantileGrid Uniform(int m);
  // {0, 0.1, ..., 1.0}.
  static QuantileGrid Default() { return Uniform(11); }

  const std::vector<double>& levels() const { return levels_; }
  std::size_t size() const { return levels_.size(); }

 private:
  std::vector<double> levels_;
};

struct CalibrationCurve {
  std::vector<double> tau;
  std::vector<double> tau_hat;
  std::optional<UserId> user;
};

// Two cut points: low = s <= low_max, medium = low_max < s <= medium_max,
// high = s > medium_max.
struct UpdBins {
  double low_max = 0.0;
  double medium_max = 0.0;

  UpdBins(double low, double medium);
  int BinOf(double s) const;
};

// Cut points at the given percentiles of the per-item popularity values
// (defaults: 20th and 80th). Thresholds are forced positive and strictly
// ascending.
UpdBins DefaultUpdBins(const std::vector<std::int64_t>& item_popularity, double low_pct = 0.2,
                       double high_pct = 0.8);

}  // namespace popalign::metrics
