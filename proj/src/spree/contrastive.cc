#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "popalign/common/error.h"
#include "popalign/spree/spree.h"

namespace popalign::spree {

namespace {

std::size_t RankCount(double frac, std::size_t n) {
  return static_cast<std::size_t>(std::ceil(frac * static_cast<double>(n) - 1e-9));
}

}  // namespace

ContrastiveSets BuildContrastiveSets(const std::vector<std::int64_t>& popularity, int n, int length,
                                     double head_frac, double tail_frac, int pad_prefix,
                                     std::uint64_t seed) {
  if (n < 1) throw ConfigError("contrastive set size must be >= 1");
  if (pad_prefix < 0 || pad_prefix >= length) {
    throw ConfigError("pad_prefix must lie in [0, T)");
  }
  if (!(head_frac > 0.0 && head_frac < 1.0) || !(tail_frac > 0.0 && tail_frac < 1.0)) {
    throw ConfigError("head_frac and tail_frac must lie in (0, 1)");
  }
  const std::size_t items = popularity.size();
  const std::size_t head_rank = RankCount(head_frac, items);
  const std::size_t tail_rank = RankCount(tail_frac, items);
  if (items == 0 || head_rank == 0 || tail_rank == 0) {
    throw DataError("catalog too small for the requested head/tail fractions");
  }
  std::vector<std::int64_t> sorted(popularity);
  std::sort(sorted.begin(), sorted.end());

  ContrastiveSets sets;
  sets.pad_prefix = pad_prefix;
  sets.rho_plus = static_cast<double>(sorted[items - head_rank]);
  sets.rho_minus = static_cast<double>(sorted[tail_rank - 1]);
  for (std::size_t i = 0; i < items; ++i) {
    const double s = static_cast<double>(popularity[i]);
    if (s >= sets.rho_plus) sets.head_items.push_back(static_cast<ItemId>(i));
    if (s <= sets.rho_minus) sets.tail_items.push_back(static_cast<ItemId>(i));
  }
  if (sets.rho_minus >= sets.rho_plus) {
    throw DataError("head and tail partitions overlap: popularity has too few distinct values");
  }

  std::mt19937_64 rng(seed);
  const auto sample = [&](const std::vector<ItemId>& pool) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    ItemSequence seq(static_cast<std::size_t>(length), kPadItem);
    for (int t = pad_prefix; t < length; ++t) seq[static_cast<std::size_t>(t)] = pool[pick(rng)];
    return seq;
  };
  sets.d_plus.reserve(static_cast<std::size_t>(n));
  sets.d_minus.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) sets.d_plus.push_back(sample(sets.head_items));
  for (int k = 0; k < n; ++k) sets.d_minus.push_back(sample(sets.tail_items));
  return sets;
}

}  // namespace popalign::spree
