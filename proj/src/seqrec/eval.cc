#include "popalign/seqrec/eval.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "popalign/common/error.h"

namespace popalign::seqrec {

RecList TopK(std::span<const double> scores, int k, const std::vector<char>& excluded) {
  if (k < 1) throw ConfigError("K must be >= 1");
  std::vector<ItemId> eligible;
  eligible.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (excluded.empty() || !excluded[i]) eligible.push_back(static_cast<ItemId>(i));
  }
  if (static_cast<int>(eligible.size()) < k) {
    throw ConfigError("K=" + std::to_string(k) + " exceeds the " +
                      std::to_string(eligible.size()) + " eligible items");
  }
  const auto better = [&scores](ItemId a, ItemId b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(eligible.begin(), eligible.begin() + k, eligible.end(), better);
  RecList out;
  out.items.assign(eligible.begin(), eligible.begin() + k);
  out.scores.reserve(static_cast<std::size_t>(k));
  for (ItemId i : out.items) out.scores.push_back(scores[i]);
  return out;
}

std::vector<char> ExclusionMask(int catalog_size, std::span<const ItemId> seen) {
  std::vector<char> mask(static_cast<std::size_t>(catalog_size), 0);
  for (ItemId i : seen) {
    if (i >= 0 && i < catalog_size) mask[static_cast<std::size_t>(i)] = 1;
  }
  return mask;
}

template <typename S>
RecList RecommendTopK(const ModelParams<S>& params, std::span<const ItemId> history, int k,
                      bool exclude_seen) {
  const auto seq = PadSequence(history, params.config.max_len);
  const auto fwd = Forward(params, seq);
  const RowVector<S> logits = ScoreItems(fwd.user_embedding, params);
  std::vector<double> scores(logits.data(), logits.data() + logits.size());
  return TopK(scores, k,
              exclude_seen ? ExclusionMask(params.config.catalog_size, history) : std::vector<char>{});
}

template RecList RecommendTopK(const ModelParams<float>&, std::span<const ItemId>, int, bool);
template RecList RecommendTopK(const ModelParams<double>&, std::span<const ItemId>, int, bool);

int RankOf(const RecList& ranked, ItemId target, int k) {
  const int limit = std::min<int>(k, static_cast<int>(ranked.items.size()));
  for (int r = 0; r < limit; ++r) {
    if (ranked.items[static_cast<std::size_t>(r)] == target) return r + 1;
  }
  return 0;
}

double HitRateAtK(const RecList& ranked, ItemId target, int k) {
  if (k < 1) throw ConfigError("K must be >= 1");
  return RankOf(ranked, target, k) > 0 ? 1.0 : 0.0;
}

double NdcgAtK(const RecList& ranked, ItemId target, int k) {
  if (k < 1) throw ConfigError("K must be >= 1");
  const int rank = RankOf(ranked, target, k);
  return rank > 0 ? 1.0 / std::log2(rank + 1.0) : 0.0;
}

}  // namespace popalign::seqrec
