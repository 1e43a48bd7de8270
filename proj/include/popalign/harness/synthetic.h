#pragma once

#include <cstdint>
#include <vector>

#include "popalign/common/kv_config.h"
#include "popalign/corpus/corpus.h"

namespace popalign::harness {

// One mixture component of per-user target popularity quantiles, expressed
// as a popularity rank percentile (1 = most popular item, 0 = least).
struct PreferenceComponent {
  double weight = 1.0;
  double mean = 0.5;
  double stddev = 0.05;
  // Fraction of the way the target moves toward 0.5 by the end of a
  // sequence.
  double drift = 0.0;
};

struct SyntheticWorldSpec {
  int n_users = 500;
  int n_items = 1000;
  double popularity_exponent = 1.0;
  std::vector<PreferenceComponent> user_preference_mix = {{0.5, 0.15, 0.05}, {0.5, 0.85, 0.05}};
  int sequence_length = 30;
  int length_jitter = 0;       // lengths uniform in [length - jitter, length + jitter]
  double follow_prob = 0.7;    // chance the next item is the planted successor
  int band_size = 50;          // successor cycles run inside rank bands of this size
  double kernel_width = 0.05;  // spread of a user's jumps around the target
  double popularity_coupling = 0.5;
  std::uint64_t seed = 42;

  void Validate() const;
  static SyntheticWorldSpec FromKeyValue(const KeyValueConfig& cfg);
};

struct SyntheticWorld {
  corpus::InteractionLog log;
  std::vector<double> target_quantile;  // per user
  std::vector<ItemId> successor;        // planted next item
  std::vector<int> item_rank;           // generator popularity rank, 0 = most popular
};

// Parses "w:mean:sd[:drift],w:mean:sd[:drift]".
std::vector<PreferenceComponent> ParsePreferenceMix(const std::string& text);

SyntheticWorld MakeSyntheticWorld(const SyntheticWorldSpec& spec);

// Every user walks a single global successor cycle from a uniform start.
SyntheticWorld MakeMarkovWorld(int n_users, int n_items, int sequence_length, std::uint64_t seed);

// 1 - rank / (n - 1).
double RankPercentile(int rank, int n_items);

}  // namespace popalign::harness
