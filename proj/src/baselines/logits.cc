#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "popalign/baselines/baselines.h"
#include "popalign/common/error.h"

namespace popalign::baselines {

Method ParseMethod(const std::string& name) {
  if (name == "ipr") return Method::kIpr;
  if (name == "pp") return Method::kPp;
  if (name == "random_neighbors") return Method::kRandomNeighbors;
  if (name == "popsteer") return Method::kPopSteer;
  throw ConfigError("unknown baseline method '" + name + "'");
}

std::string MethodName(Method m) {
  switch (m) {
    case Method::kIpr: return "ipr";
    case Method::kPp: return "pp";
    case Method::kRandomNeighbors: return "random_neighbors";
    case Method::kPopSteer: return "popsteer";
  }
  return "unknown";
}

void BaselineConfig::Validate() const {
  if (!(strength >= 0.0 && strength <= 1.0)) {
    throw ConfigError(MethodName(method) + " strength must lie in [0, 1]");
  }
}

std::vector<double> IprRescale(std::span<const double> logits, const std::vector<std::int64_t>& popularity,
                               double alpha) {
  if (logits.size() != popularity.size()) throw ConfigError("logits and popularity differ in size");
  if (alpha < 0.0) throw ConfigError("IPR alpha must be >= 0");
  const std::int64_t max_s = popularity.empty() ? 0 : *std::max_element(popularity.begin(), popularity.end());
  if (max_s <= 0) throw DataError("IPR needs a positive maximum popularity");
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double factor = 1.0 + alpha * static_cast<double>(popularity[i]) / static_cast<double>(max_s);
    out[i] = logits[i] >= 0.0 ? logits[i] / factor : logits[i] * factor;
  }
  return out;
}

std::vector<double> PersonalPopularity(std::span<const ItemId> history, int catalog_size) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(catalog_size), 0);
  for (ItemId i : history) {
    if (i < 0 || i >= catalog_size) throw DataError("history item outside the catalog");
    ++counts[static_cast<std::size_t>(i)];
  }
  std::map<std::int64_t, int> rank;
  for (auto c : counts) {
    if (c > 0) rank[c] = 0;
  }
  int r = 0;
  for (auto& [count, value] : rank) value = ++r;
  std::vector<double> out(counts.size(), 0.0);
  if (r == 0) return out;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] > 0) out[i] = static_cast<double>(rank[counts[i]]) / r;
  }
  return out;
}

std::vector<double> PpInterpolate(std::span<const double> logits, std::span<const ItemId> history, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("PP alpha must lie in [0, 1]");
  const auto spp = PersonalPopularity(history, static_cast<int>(logits.size()));
  const auto [lo, hi] = std::minmax_element(logits.begin(), logits.end());
  const double range = logits.empty() ? 0.0 : *hi - *lo;
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double base = range > 0.0 ? (logits[i] - *lo) / range : 0.0;
    out[i] = alpha * spp[i] + (1.0 - alpha) * base;
  }
  return out;
}

int NeighborhoodSize(int k, double alpha) {
  if (k < 1) throw ConfigError("K must be >= 1");
  if (alpha < 0.0) throw ConfigError("random neighbors alpha must be >= 0");
  return static_cast<int>(std::llround(k * (1.0 + alpha)));
}

seqrec::RecList RandomNeighbors(std::span<const double> scores, int k, double alpha, std::uint64_t seed,
                                const std::vector<char>& excluded) {
  const int m = NeighborhoodSize(k, alpha);
  const auto hood = seqrec::TopK(scores, m, excluded);
  std::vector<std::size_t> idx(hood.items.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<std::size_t> pick;
  pick.reserve(static_cast<std::size_t>(k));
  std::mt19937_64 rng(seed);
  std::sample(idx.begin(), idx.end(), std::back_inserter(pick), k, rng);
  seqrec::RecList out;
  for (std::size_t p : pick) {
    out.items.push_back(hood.items[p]);
    out.scores.push_back(hood.scores[p]);
  }
  return out;
}

}  // namespace popalign::baselines
