#include <gtest/gtest.h>
#include <zlib.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <tuple>
#include <unistd.h>

#include "popalign/common/error.h"
#include "popalign/corpus/corpus.h"

namespace popalign::corpus {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("popalign_corpus_" + std::to_string(::getpid()))) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string File(const std::string& name, const std::string& content) const {
    const auto p = (path_ / name).string();
    std::ofstream(p) << content;
    return p;
  }
  std::string Path(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

TEST(Load, ParsesAndReindexes) {
  TempDir dir;
  const auto path = dir.File("a.tsv", "10\t7\t1\n10\t3\t2\n20\t7\t5\n");
  const auto log = LoadInteractions(path, ColumnSpec{});
  ASSERT_EQ(log.num_users(), 2);
  ASSERT_EQ(log.num_items(), 2);
  EXPECT_EQ(log.sequence(0).size(), 2u);
  EXPECT_EQ(log.sequence(1).size(), 1u);
  EXPECT_EQ(log.item_original_ids(), (std::vector<std::int64_t>{3, 7}));
  EXPECT_EQ(log.sequence(0), (ItemSequence{1, 0}));
}

TEST(Load, SortsByTimestampKeepingFileOrderOnTies) {
  TempDir dir;
  const auto path = dir.File("b.csv", "user,item,ts\n1,5,30\n1,6,10\n1,7,20\n1,8,10\n");
  ColumnSpec spec;
  spec.delimiter = ',';
  spec.has_header = true;
  const auto log = LoadInteractions(path, spec);
  std::vector<std::int64_t> originals;
  for (ItemId i : log.sequence(0)) originals.push_back(log.item_original_ids()[i]);
  EXPECT_EQ(originals, (std::vector<std::int64_t>{6, 8, 7, 5}));
}

TEST(Load, ColumnOrderIsConfigurable) {
  TempDir dir;
  const auto path = dir.File("c.txt", "100:1:9\n200:1:4\n");
  ColumnSpec spec;
  spec.delimiter = ':';
  spec.timestamp_column = 0;
  spec.user_column = 1;
  spec.item_column = 2;
  const auto log = LoadInteractions(path, spec);
  ASSERT_EQ(log.num_users(), 1);
  EXPECT_EQ(log.item_original_ids()[static_cast<std::size_t>(log.sequence(0)[0])], 9);
}

TEST(Load, ReadsGzip) {
  TempDir dir;
  const auto path = dir.Path("d.tsv.gz");
  gzFile gz = gzopen(path.c_str(), "wb");
  const std::string body = "1\t2\t3\n1\t4\t5\n";
  gzwrite(gz, body.data(), static_cast<unsigned>(body.size()));
  gzclose(gz);
  const auto log = LoadInteractions(path, ColumnSpec{});
  EXPECT_EQ(log.num_interactions(), 2);
}

TEST(Load, ErrorsNameTheLine) {
  TempDir dir;
  const auto bad = dir.File("e.tsv", "1\t2\t3\n1\tabc\t4\n");
  try {
    LoadInteractions(bad, ColumnSpec{});
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  EXPECT_THROW(LoadInteractions(dir.File("f.tsv", "1\t2\n"), ColumnSpec{}), DataError);
  EXPECT_THROW(LoadInteractions(dir.File("g.tsv", ""), ColumnSpec{}), DataError);
  EXPECT_THROW(LoadInteractions(dir.Path("missing.tsv"), ColumnSpec{}), DataError);
}

using Triple = std::tuple<std::int64_t, std::int64_t, std::int64_t>;

std::multiset<Triple> AsTriples(const InteractionLog& log) {
  std::multiset<Triple> out;
  for (const auto& x : log.Interactions()) out.insert({x.user_id, x.item_id, x.timestamp});
  return out;
}

// Repeatedly drops every interaction whose user or item is below `min`.
std::multiset<Triple> KCoreOracle(std::vector<Triple> rows, int min) {
  for (bool changed = true; changed;) {
    std::map<std::int64_t, int> uc, ic;
    for (const auto& [u, i, t] : rows) {
      ++uc[u];
      ++ic[i];
    }
    std::vector<Triple> kept;
    for (const auto& r : rows) {
      if (uc[std::get<0>(r)] >= min && ic[std::get<1>(r)] >= min) kept.push_back(r);
    }
    changed = kept.size() != rows.size();
    rows = std::move(kept);
  }
  return {rows.begin(), rows.end()};
}

TEST(Filter, MinOneIsIdentity) {
  const auto log = InteractionLog::FromSequences({{0, 1, 2}, {2}}, 3);
  EXPECT_EQ(FilterMinInteractions(log, 1), log);
  EXPECT_THROW(FilterMinInteractions(log, 0), ConfigError);
}

TEST(Filter, DropsShortUsersAndEverythingWhenNothingSurvives) {
  const auto log = InteractionLog::FromSequences({{0, 1, 2, 3}}, 4);
  EXPECT_THROW(FilterMinInteractions(log, 5), DataError);
}

TEST(Filter, ChainReachesFixedPoint) {
  // Rare items 5..8 shorten user 4, which drops item 9 below the threshold
  // and then shortens users 0..3; users 5..9 survive.
  std::vector<ItemSequence> seqs = {
      {0, 1, 2, 3, 9}, {0, 1, 2, 3, 9}, {0, 1, 2, 3, 9}, {0, 1, 2, 3, 9}, {9, 5, 6, 7, 8},
      {0, 1, 2, 3, 4}, {4, 3, 2, 1, 0}, {0, 1, 2, 3, 4}, {2, 3, 4, 0, 1}, {1, 2, 3, 4, 0}};
  const auto log = InteractionLog::FromSequences(seqs, 10);
  std::vector<Triple> rows;
  for (const auto& x : log.Interactions()) rows.push_back({x.user_id, x.item_id, x.timestamp});
  const auto filtered = FilterMinInteractions(log, 5);
  EXPECT_EQ(filtered.num_users(), 5);
  EXPECT_EQ(filtered.num_items(), 5);
  EXPECT_EQ(AsTriples(filtered), KCoreOracle(rows, 5));
  EXPECT_EQ(FilterMinInteractions(filtered, 5), filtered);
}

TEST(Filter, MatchesOracleOnRandomLogs) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<ItemId> item(0, 14);
    std::uniform_int_distribution<int> len(1, 12);
    std::vector<ItemSequence> seqs(20);
    for (auto& s : seqs) {
      s.resize(static_cast<std::size_t>(len(rng)));
      for (auto& i : s) i = item(rng);
    }
    const auto log = InteractionLog::FromSequences(seqs, 15);
    std::vector<Triple> rows;
    for (const auto& x : log.Interactions()) rows.push_back({x.user_id, x.item_id, x.timestamp});
    const int min = 2 + trial % 4;
    const auto expected = KCoreOracle(rows, min);
    if (expected.empty()) {
      EXPECT_THROW(FilterMinInteractions(log, min), DataError);
      continue;
    }
    const auto got = FilterMinInteractions(log, min);
    EXPECT_EQ(AsTriples(got), expected);
    EXPECT_EQ(FilterMinInteractions(got, min), got);
  }
}

TEST(Split, LeaveOneOut) {
  const auto log = InteractionLog::FromSequences({{0, 1, 2, 3}, {4, 5, 6}}, 7);
  const auto s = LeaveOneOutSplit(log);
  EXPECT_EQ(s.train.sequence(0), (ItemSequence{0, 1}));
  EXPECT_EQ(s.valid[0], 2);
  EXPECT_EQ(s.test[0], 3);
  EXPECT_EQ(s.train.sequence(1), (ItemSequence{4}));
  EXPECT_EQ(s.valid[1], 5);
  EXPECT_EQ(s.test[1], 6);
  EXPECT_EQ(s.train.num_items(), 7);
  EXPECT_THROW(LeaveOneOutSplit(InteractionLog::FromSequences({{0, 1}}, 2)), DataError);
}

TEST(Split, PartitionsEverySequence) {
  std::mt19937_64 rng(8);
  std::vector<ItemSequence> seqs(30);
  for (auto& s : seqs) {
    s.resize(3 + rng() % 10);
    for (auto& i : s) i = static_cast<ItemId>(rng() % 20);
  }
  const auto log = InteractionLog::FromSequences(seqs, 20);
  const auto s = LeaveOneOutSplit(log);
  for (UserId u = 0; u < log.num_users(); ++u) {
    ItemSequence joined = s.train.sequence(u);
    joined.push_back(s.valid[u]);
    joined.push_back(s.test[u]);
    EXPECT_EQ(joined, log.sequence(u));
  }
}

TEST(Popularity, CountsRepeatsAndConserves) {
  const auto log = InteractionLog::FromSequences({{0, 1, 1}, {0, 2}, {0}}, 4);
  const auto pop = ComputePopularity(log);
  EXPECT_EQ(pop.s, (std::vector<std::int64_t>{3, 2, 1, 0}));
  EXPECT_EQ(pop.total_interactions, 6);
  EXPECT_EQ(pop.max_s(), 3);
  EXPECT_EQ(std::accumulate(pop.s.begin(), pop.s.end(), std::int64_t{0}), log.num_interactions());
  for (auto v : pop.s_hat) EXPECT_EQ(v, 0);
}

TEST(Popularity, SourceSelectsSplitPart) {
  const auto log = InteractionLog::FromSequences({{0, 1, 2, 3}}, 4);
  const auto split = LeaveOneOutSplit(log);
  const auto train = ComputePopularity(log, split, PopularitySource::kTrain);
  const auto all = ComputePopularity(log, split, PopularitySource::kAll);
  EXPECT_EQ(train.s, (std::vector<std::int64_t>{1, 1, 0, 0}));
  EXPECT_EQ(all.s, (std::vector<std::int64_t>{1, 1, 1, 1}));
  EXPECT_EQ(ParsePopularitySource("all"), PopularitySource::kAll);
  EXPECT_THROW(ParsePopularitySource("test"), ConfigError);
}

TEST(Popularity, RecordsRecommendations) {
  auto pop = ComputePopularity(InteractionLog::FromSequences({{0, 1}}, 3));
  pop.RecordRecommendations({2, 2, 0});
  EXPECT_EQ(pop.s_hat, (std::vector<std::int64_t>{1, 0, 2}));
  pop.ClearRecommendations();
  EXPECT_EQ(pop.s_hat, (std::vector<std::int64_t>{0, 0, 0}));
}

TEST(IdMap, RoundTripsAndInverts) {
  TempDir dir;
  const auto log = LoadInteractions(dir.File("h.tsv", "50\t9\t1\n7\t4\t2\n50\t4\t3\n"), ColumnSpec{});
  WriteIdMap(dir.Path("ids.json"), log);
  const auto map = ReadIdMap(dir.Path("ids.json"));
  EXPECT_EQ(map.users, log.user_original_ids());
  EXPECT_EQ(map.items, log.item_original_ids());
  std::set<std::int64_t> distinct(map.items.begin(), map.items.end());
  EXPECT_EQ(distinct.size(), map.items.size());
  EXPECT_THROW(ReadIdMap(dir.File("bad.json", "{not json")), DataError);
}

}  // namespace
}  // namespace popalign::corpus
