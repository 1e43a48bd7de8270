#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "popalign/common/types.h"

namespace popalign::corpus {

struct Interaction {
  std::int64_t user_id = 0;
  std::int64_t item_id = 0;
  std::int64_t timestamp = 0;
};

// Which columns of a delimited row carry user, item and timestamp.
struct ColumnSpec {
  char delimiter = '\t';
  int user_column = 0;
  int item_column = 1;
  int timestamp_column = 2;
  bool has_header = false;
};

// Per-user, time-ordered interaction sequences over dense ids.
//
// Users and items are re-indexed to 0..n-1 in ascending order of their
// original ids; `user_original_ids` / `item_original_ids` invert the mapping.
// The item id space may contain items that no sequence references (e.g. the
// train part of a split keeps the full catalog).
class InteractionLog {
 public:
  InteractionLog() = default;

  // Re-indexes densely and sorts each user's events by timestamp; ties keep
  // input order. Throws DataError on an empty input.
  static InteractionLog FromInteractions(const std::vector<Interaction>& raw);

  // Builds a log directly from dense sequences (catalog of `num_items`).
  // Timestamps default to the position within each sequence.
  static InteractionLog FromSequences(std::vector<ItemSequence> sequences, std::int32_t num_items);

  // Assembles a log from already-dense parts; ids must be in range and the
  // parallel vectors consistent.
  static InteractionLog FromParts(std::vector<ItemSequence> sequences,
                                  std::vector<std::vector<std::int64_t>> timestamps,
                                  std::vector<std::int64_t> user_original_ids,
                                  std::vector<std::int64_t> item_original_ids);

  std::int32_t num_users() const { return static_cast<std::int32_t>(sequences_.size()); }
  std::int32_t num_items() const { return static_cast<std::int32_t>(item_original_ids_.size()); }
  std::int64_t num_interactions() const;

  const ItemSequence& sequence(UserId user) const { return sequences_.at(user); }
  const std::vector<ItemSequence>& sequences() const { return sequences_; }
  const std::vector<std::int64_t>& timestamps(UserId user) const { return timestamps_.at(user); }

  const std::vector<std::int64_t>& user_original_ids() const { return user_original_ids_; }
  const std::vector<std::int64_t>& item_original_ids() const { return item_original_ids_; }

  // Flat list in (user, time) order, carrying original ids.
  std::vector<Interaction> Interactions() const;

  friend bool operator==(const InteractionLog&, const InteractionLog&) = default;

 private:
  std::vector<ItemSequence> sequences_;
  std::vector<std::vector<std::int64_t>> timestamps_;
  std::vector<std::int64_t> user_original_ids_;
  std::vector<std::int64_t> item_original_ids_;
};

// Reads delimited text (optionally gzip-compressed). Throws DataError naming
// the offending line for malformed rows, and on unreadable or empty input.
InteractionLog LoadInteractions(const std::string& path, const ColumnSpec& columns);

// Iterative k-core filter: drops users and items with fewer than `min`
// events until nothing changes, then re-densifies ids. Throws DataError when
// nothing survives.
InteractionLog FilterMinInteractions(const InteractionLog& log, int min);

struct Split {
  InteractionLog train;      // all but the last two events of every user
  std::vector<ItemId> valid;  // second most recent item per user
  std::vector<ItemId> test;   // most recent item per user
};

// Requires >= 3 events per user (DataError otherwise).
Split LeaveOneOutSplit(const InteractionLog& log);

enum class PopularitySource { kTrain, kAll };

PopularitySource ParsePopularitySource(const std::string& text);

// s(i): interaction counts; s_hat(i): recommendation counts (zero until
// RecordRecommendations is called).
struct PopularityTable {
  std::vector<std::int64_t> s;
  std::vector<std::int64_t> s_hat;
  std::int64_t total_interactions = 0;

  std::int32_t num_items() const { return static_cast<std::int32_t>(s.size()); }
  std::int64_t max_s() const;
  void RecordRecommendations(const std::vector<ItemId>& items);
  void ClearRecommendations();
};

// Counts every occurrence (repeats included). Throws DataError on an empty log.
PopularityTable ComputePopularity(const InteractionLog& log);

// Popularity per the configured source: train split only, or the full log.
PopularityTable ComputePopularity(const InteractionLog& full, const Split& split,
                                  PopularitySource source);

// JSON sidecar {"users": [...], "items": [...]} listing original ids by dense id.
void WriteIdMap(const std::string& path, const InteractionLog& log);

struct IdMap {
  std::vector<std::int64_t> users;
  std::vector<std::int64_t> items;
};
IdMap ReadIdMap(const std::string& path);

}  // namespace popalign::corpus
