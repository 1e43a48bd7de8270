#pragma once

#include <span>
#include <vector>

#include "popalign/common/types.h"
#include "popalign/seqrec/model.h"

namespace popalign::seqrec {

// Top-K recommendation list, scores descending, ties by smaller item id.
struct RecList {
  std::vector<ItemId> items;
  std::vector<double> scores;
};

// Selects the top K of `scores` among items not flagged in `excluded` (which
// may be empty). Throws ConfigError if fewer than K items are eligible.
RecList TopK(std::span<const double> scores, int k, const std::vector<char>& excluded);

// Scores the (padded) history, optionally excluding items it contains.
template <typename S>
RecList RecommendTopK(const ModelParams<S>& params, std::span<const ItemId> history, int k,
                      bool exclude_seen);

std::vector<char> ExclusionMask(int catalog_size, std::span<const ItemId> seen);

// 1-based rank of target within the first K entries, 0 if absent.
int RankOf(const RecList& ranked, ItemId target, int k);
double HitRateAtK(const RecList& ranked, ItemId target, int k);
double NdcgAtK(const RecList& ranked, ItemId target, int k);

}  // namespace popalign::seqrec
