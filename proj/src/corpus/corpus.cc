#include "popalign/corpus/corpus.h"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>

#include "json.hpp"
#include "popalign/common/error.h"

namespace popalign::corpus {
namespace {

// Dense index for each distinct value, ascending.
std::vector<std::int64_t> SortedDistinct(std::vector<std::int64_t> values) {
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  return values;
}

std::int32_t DenseIndex(const std::vector<std::int64_t>& sorted, std::int64_t value) {
  const auto it = std::lower_bound(sorted.begin(), sorted.end(), value);
  return static_cast<std::int32_t>(it - sorted.begin());
}

}  // namespace

InteractionLog InteractionLog::FromInteractions(const std::vector<Interaction>& raw) {
  if (raw.empty()) throw DataError("interaction log is empty");
  std::vector<std::int64_t> users, items;
  users.reserve(raw.size());
  items.reserve(raw.size());
  for (const auto& r : raw) {
    users.push_back(r.user_id);
    items.push_back(r.item_id);
  }
  InteractionLog log;
  log.user_original_ids_ = SortedDistinct(std::move(users));
  log.item_original_ids_ = SortedDistinct(std::move(items));

  // Per user: (timestamp, input order, item).
  std::vector<std::vector<std::pair<std::int64_t, ItemId>>> events(log.user_original_ids_.size());
  for (const auto& r : raw) {
    events[DenseIndex(log.user_original_ids_, r.user_id)].emplace_back(
        r.timestamp, DenseIndex(log.item_original_ids_, r.item_id));
  }
  log.sequences_.resize(events.size());
  log.timestamps_.resize(events.size());
  for (std::size_t u = 0; u < events.size(); ++u) {
    auto& ev = events[u];
    std::stable_sort(ev.begin(), ev.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [ts, item] : ev) {
      log.timestamps_[u].push_back(ts);
      log.sequences_[u].push_back(item);
    }
  }
  return log;
}

InteractionLog InteractionLog::FromSequences(std::vector<ItemSequence> sequences,
                                             std::int32_t num_items) {
  std::vector<std::vector<std::int64_t>> timestamps(sequences.size());
  for (std::size_t u = 0; u < sequences.size(); ++u) {
    timestamps[u].resize(sequences[u].size());
    std::iota(timestamps[u].begin(), timestamps[u].end(), 0);
  }
  std::vector<std::int64_t> users(sequences.size());
  std::iota(users.begin(), users.end(), 0);
  std::vector<std::int64_t> items(static_cast<std::size_t>(num_items));
  std::iota(items.begin(), items.end(), 0);
  return FromParts(std::move(sequences), std::move(timestamps), std::move(users),
                   std::move(items));
}

InteractionLog InteractionLog::FromParts(std::vector<ItemSequence> sequences,
                                         std::vector<std::vector<std::int64_t>> timestamps,
                                         std::vector<std::int64_t> user_original_ids,
                                         std::vector<std::int64_t> item_original_ids) {
  if (sequences.size() != timestamps.size() || sequences.size() != user_original_ids.size()) {
    throw DataError("inconsistent interaction log parts");
  }
  const auto num_items = static_cast<ItemId>(item_original_ids.size());
  for (std::size_t u = 0; u < sequences.size(); ++u) {
    if (sequences[u].size() != timestamps[u].size()) {
      throw DataError("inconsistent interaction log parts");
    }
    for (ItemId i : sequences[u]) {
      if (i < 0 || i >= num_items) throw DataError("item id out of range in interaction log");
    }
  }
  InteractionLog log;
  log.sequences_ = std::move(sequences);
  log.timestamps_ = std::move(timestamps);
  log.user_original_ids_ = std::move(user_original_ids);
  log.item_original_ids_ = std::move(item_original_ids);
  return log;
}

std::int64_t InteractionLog::num_interactions() const {
  std::int64_t n = 0;
  for (const auto& s : sequences_) n += static_cast<std::int64_t>(s.size());
  return n;
}

std::vector<Interaction> InteractionLog::Interactions() const {
  std::vector<Interaction> out;
  out.reserve(static_cast<std::size_t>(num_interactions()));
  for (std::size_t u = 0; u < sequences_.size(); ++u) {
    for (std::size_t j = 0; j < sequences_[u].size(); ++j) {
      out.push_back({user_original_ids_[u], item_original_ids_[sequences_[u][j]],
                     timestamps_[u][j]});
    }
  }
  return out;
}

InteractionLog FilterMinInteractions(const InteractionLog& log, int min) {
  if (min < 1) throw ConfigError("min_interactions must be >= 1");
  std::vector<ItemSequence> seqs = log.sequences();
  std::vector<std::vector<std::int64_t>> times(seqs.size());
  for (std::size_t u = 0; u < seqs.size(); ++u) times[u] = log.timestamps(static_cast<UserId>(u));
  std::vector<bool> user_alive(seqs.size(), true);

  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<std::int64_t> item_count(static_cast<std::size_t>(log.num_items()), 0);
    for (std::size_t u = 0; u < seqs.size(); ++u) {
      if (!user_alive[u]) continue;
      for (ItemId i : seqs[u]) ++item_count[i];
    }
    for (std::size_t u = 0; u < seqs.size(); ++u) {
      if (!user_alive[u]) continue;
      ItemSequence kept_items;
      std::vector<std::int64_t> kept_times;
      for (std::size_t j = 0; j < seqs[u].size(); ++j) {
        if (item_count[seqs[u][j]] >= min) {
          kept_items.push_back(seqs[u][j]);
          kept_times.push_back(times[u][j]);
        }
      }
      if (kept_items.size() != seqs[u].size()) changed = true;
      seqs[u] = std::move(kept_items);
      times[u] = std::move(kept_times);
      if (static_cast<int>(seqs[u].size()) < min) {
        user_alive[u] = false;
        changed = true;
      }
    }
  }

  std::vector<std::int32_t> item_remap(static_cast<std::size_t>(log.num_items()), -1);
  for (std::size_t u = 0; u < seqs.size(); ++u) {
    if (!user_alive[u]) continue;
    for (ItemId i : seqs[u]) item_remap[i] = 0;
  }
  std::vector<std::int64_t> item_ids;
  for (std::size_t i = 0; i < item_remap.size(); ++i) {
    if (item_remap[i] == 0) {
      item_remap[i] = static_cast<std::int32_t>(item_ids.size());
      item_ids.push_back(log.item_original_ids()[i]);
    }
  }
  std::vector<ItemSequence> out_seqs;
  std::vector<std::vector<std::int64_t>> out_times;
  std::vector<std::int64_t> user_ids;
  for (std::size_t u = 0; u < seqs.size(); ++u) {
    if (!user_alive[u]) continue;
    for (ItemId& i : seqs[u]) i = item_remap[i];
    out_seqs.push_back(std::move(seqs[u]));
    out_times.push_back(std::move(times[u]));
    user_ids.push_back(log.user_original_ids()[u]);
  }
  if (out_seqs.empty()) {
    throw DataError("filtering with min_interactions=" + std::to_string(min) +
                    " removed every user; dataset unusable");
  }
  return InteractionLog::FromParts(std::move(out_seqs), std::move(out_times), std::move(user_ids),
                                   std::move(item_ids));
}

Split LeaveOneOutSplit(const InteractionLog& log) {
  Split split;
  std::vector<ItemSequence> train;
  std::vector<std::vector<std::int64_t>> times;
  train.reserve(static_cast<std::size_t>(log.num_users()));
  for (UserId u = 0; u < log.num_users(); ++u) {
    const auto& seq = log.sequence(u);
    if (seq.size() < 3) {
      throw DataError("user " + std::to_string(log.user_original_ids()[u]) + " has " +
                      std::to_string(seq.size()) +
                      " interactions; leave-one-out needs >= 3 (check filtering)");
    }
    const std::size_t n = seq.size();
    split.test.push_back(seq[n - 1]);
    split.valid.push_back(seq[n - 2]);
    train.emplace_back(seq.begin(), seq.end() - 2);
    const auto& ts = log.timestamps(u);
    times.emplace_back(ts.begin(), ts.end() - 2);
  }
  split.train = InteractionLog::FromParts(std::move(train), std::move(times),
                                          log.user_original_ids(), log.item_original_ids());
  return split;
}

PopularitySource ParsePopularitySource(const std::string& text) {
  if (text == "train") return PopularitySource::kTrain;
  if (text == "all") return PopularitySource::kAll;
  throw ConfigError("popularity_source must be 'train' or 'all', got '" + text + "'");
}

std::int64_t PopularityTable::max_s() const {
  return s.empty() ? 0 : *std::max_element(s.begin(), s.end());
}

void PopularityTable::RecordRecommendations(const std::vector<ItemId>& items) {
  for (ItemId i : items) ++s_hat.at(static_cast<std::size_t>(i));
}

void PopularityTable::ClearRecommendations() { std::fill(s_hat.begin(), s_hat.end(), 0); }

PopularityTable ComputePopularity(const InteractionLog& log) {
  if (log.num_interactions() == 0) throw DataError("cannot compute popularity of an empty log");
  PopularityTable table;
  table.s.assign(static_cast<std::size_t>(log.num_items()), 0);
  table.s_hat.assign(static_cast<std::size_t>(log.num_items()), 0);
  for (const auto& seq : log.sequences()) {
    for (ItemId i : seq) ++table.s[i];
  }
  table.total_interactions = log.num_interactions();
  return table;
}

PopularityTable ComputePopularity(const InteractionLog& full, const Split& split,
                                  PopularitySource source) {
  return source == PopularitySource::kTrain ? ComputePopularity(split.train)
                                            : ComputePopularity(full);
}

void WriteIdMap(const std::string& path, const InteractionLog& log) {
  nlohmann::json j;
  j["users"] = log.user_original_ids();
  j["items"] = log.item_original_ids();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << j.dump() << '\n';
}

IdMap ReadIdMap(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read '" + path + "'");
  try {
    const auto j = nlohmann::json::parse(in);
    return {j.at("users").get<std::vector<std::int64_t>>(),
            j.at("items").get<std::vector<std::int64_t>>()};
  } catch (const nlohmann::json::exception& e) {
    throw DataError("'" + path + "': malformed id map: " + e.what());
  }
}

}  // namespace popalign::corpus
