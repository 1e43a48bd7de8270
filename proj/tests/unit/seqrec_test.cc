#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "popalign/common/error.h"
#include "popalign/seqrec/checkpoint.h"
#include "popalign/seqrec/eval.h"
#include "popalign/seqrec/grad_check.h"
#include "popalign/seqrec/model.h"
#include "popalign/seqrec/train.h"

namespace popalign::seqrec {
namespace {

ModelConfig TinyConfig() {
  ModelConfig c;
  c.num_blocks = 1;
  c.dim = 8;
  c.max_len = 16;
  c.heads = 1;
  c.dropout = 0.0;
  c.catalog_size = 30;
  return c;
}

std::vector<TrainingExample> RandomBatch(const ModelConfig& c, int users, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<ItemId> item(0, c.catalog_size - 1);
  std::uniform_int_distribution<int> len(3, c.max_len + 4);
  std::vector<ItemSequence> seqs;
  for (int u = 0; u < users; ++u) {
    ItemSequence s(static_cast<std::size_t>(len(rng)));
    for (auto& i : s) i = item(rng);
    seqs.push_back(s);
  }
  auto log = corpus::InteractionLog::FromSequences(seqs, c.catalog_size);
  std::vector<UserId> ids;
  auto batch = BuildTrainingExamples(log, c.max_len, &ids);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    SampleNegatives(batch[k], log.sequence(ids[k]), c.catalog_size, 2, rng);
  }
  return batch;
}

TEST(GradCheck, OneBlockMatchesFiniteDifferences) {
  const auto cfg = TinyConfig();
  auto params = ModelParams<double>::Initialize(cfg, 7);
  // Move LN parameters off their trivial values so their gradients are exercised.
  std::mt19937_64 rng(3);
  std::normal_distribution<double> noise(0.0, 0.1);
  for (auto& b : params.blocks) {
    for (auto* m : {&b.ln1_gain, &b.ln1_bias, &b.ln2_gain, &b.ln2_bias, &b.bq, &b.bk, &b.bv, &b.bo, &b.b1, &b.b2}) {
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] += noise(rng);
    }
  }
  const auto batch = RandomBatch(cfg, 4, 11);
  const auto r = GradCheck(params, batch, 1e-5);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_tensor << "[" << r.worst_index << "] analytic "
                                        << r.analytic << " numeric " << r.numeric;
  EXPECT_EQ(r.checked, params.ParameterCount());
}

TEST(GradCheck, TwoHeadsTwoBlocks) {
  auto cfg = TinyConfig();
  cfg.num_blocks = 2;
  cfg.heads = 2;
  cfg.ffn_dim = 12;
  cfg.catalog_size = 20;
  const auto params = ModelParams<double>::Initialize(cfg, 5);
  const auto r = GradCheck(params, RandomBatch(cfg, 3, 2), 1e-5);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_tensor;
}

TEST(GradCheck, RelativeErrorConventions) {
  EXPECT_EQ(RelativeError(0.0, 0.0), 0.0);
  EXPECT_NEAR(RelativeError(1.0, 1.1), 0.1 / 1.1, 1e-15);
  EXPECT_NEAR(RelativeError(1e-9, 0.0), 1e-9 / 1e-6, 1e-15);
}

TEST(GradCheck, LinearToyIsExact) {
  std::vector<double> w{0.3, -1.2, 2.0};
  const std::vector<double> x{1.5, 0.5, -2.0};
  auto loss = [&] { return w[0] * x[0] + w[1] * x[1] + w[2] * x[2]; };
  const auto r = FiniteDifferenceCheck(w, x, loss, 1e-5);
  EXPECT_LT(r.max_relative_error, 1e-8);
}

TEST(GradCheck, UnusedEmbeddingHasZeroGradientBothWays) {
  auto cfg = TinyConfig();
  auto params = ModelParams<double>::Initialize(cfg, 1);
  TrainingExample ex;
  ex.input.assign(static_cast<std::size_t>(cfg.max_len), kPadItem);
  ex.positives.assign(static_cast<std::size_t>(cfg.max_len), kPadItem);
  ex.negatives.assign(static_cast<std::size_t>(cfg.max_len), {});
  ex.input.back() = 1;
  ex.positives.back() = 2;
  ex.negatives.back() = {3};
  std::vector<TrainingExample> batch{ex};
  auto grad = ModelParams<double>::Zeros(cfg);
  const double base = LossAndGradient(params, std::span<const TrainingExample>(batch), &grad);
  EXPECT_EQ(grad.item_embeddings.row(20).norm(), 0.0);
  params.item_embeddings(20, 0) += 1e-3;
  EXPECT_EQ(LossAndGradient<double>(params, batch, nullptr), base);
}

ModelParams<double> SmallModel(int blocks = 2) {
  auto cfg = TinyConfig();
  cfg.num_blocks = blocks;
  return ModelParams<double>::Initialize(cfg, 13);
}

TEST(Forward, DeterministicAndTraceConsistent) {
  const auto p = SmallModel();
  const auto seq = PadSequence(ItemSequence{3, 4, 5, 9}, p.config.max_len);
  const auto a = Forward(p, seq);
  const auto b = Forward(p, seq, true);
  EXPECT_EQ(a.user_embedding, b.user_embedding);
  ASSERT_TRUE(b.trace.has_value());
  ASSERT_EQ(b.trace->levels.size(), 3u);
  const auto& top = b.trace->levels.back();
  EXPECT_EQ(RowVector<double>(top.row(top.rows() - 1)), b.user_embedding);
  for (int t = 0; t < p.config.max_len; ++t) {
    if (seq[t] == kPadItem) continue;
    const RowVector<double> expect = p.item_embeddings.row(seq[t]) + p.positional_embeddings.row(t);
    EXPECT_EQ(RowVector<double>(b.trace->levels[0].row(t)), expect);
  }
  EXPECT_FALSE(a.trace.has_value());
}

TEST(Forward, PaddingIsNeutral) {
  auto p = SmallModel();
  const ItemSequence hist{7, 2, 11};
  const auto seq = PadSequence(hist, p.config.max_len);
  EXPECT_EQ(seq.size(), static_cast<std::size_t>(p.config.max_len));
  EXPECT_EQ(seq.back(), 11);
  const auto h = Forward(p, seq).user_embedding;
  // Positional rows under the padding never reach a real position.
  for (int t = 0; t < p.config.max_len - 3; ++t) p.positional_embeddings.row(t).setConstant(5.0);
  EXPECT_EQ(Forward(p, seq).user_embedding, h);
  // A single item: the output only depends on that item and its position.
  const auto one = PadSequence(ItemSequence{4}, p.config.max_len);
  auto q = SmallModel();
  const auto h1 = Forward(q, one).user_embedding;
  q.item_embeddings.row(5).setConstant(-3.0);
  EXPECT_EQ(Forward(q, one).user_embedding, h1);
}

TEST(Forward, TruncatesToMostRecent) {
  const auto p = SmallModel();
  ItemSequence long_hist;
  for (int k = 0; k < p.config.max_len + 5; ++k) long_hist.push_back(k % p.config.catalog_size);
  const auto seq = PadSequence(long_hist, p.config.max_len);
  EXPECT_EQ(seq.front(), long_hist[5]);
  EXPECT_EQ(seq.back(), long_hist.back());
}

TEST(Forward, IsCausal) {
  const auto p = SmallModel();
  auto seq = PadSequence(ItemSequence{1, 2, 3, 4, 5, 6, 7, 8}, p.config.max_len);
  const auto base = Forward(p, seq, true);
  const int t = p.config.max_len - 3;
  seq[t] = 19;
  const auto moved = Forward(p, seq, true);
  for (std::size_t l = 0; l < base.trace->levels.size(); ++l) {
    for (int s = 0; s < t; ++s) {
      EXPECT_EQ(RowVector<double>(base.trace->levels[l].row(s)), RowVector<double>(moved.trace->levels[l].row(s)));
    }
    EXPECT_NE(RowVector<double>(base.trace->levels[l].row(t)), RowVector<double>(moved.trace->levels[l].row(t)));
  }
}

TEST(Forward, RejectsBadInput) {
  const auto p = SmallModel();
  ItemSequence all_pad(static_cast<std::size_t>(p.config.max_len), kPadItem);
  EXPECT_THROW(Forward(p, all_pad), DataError);
  auto seq = PadSequence(ItemSequence{1, 2}, p.config.max_len);
  seq.back() = p.config.catalog_size;
  EXPECT_THROW(Forward(p, seq), DataError);
  EXPECT_THROW(Forward(p, ItemSequence{1, 2}), DataError);
}

TEST(Forward, InterventionAtUserEmbeddingShiftsLogitsLinearly) {
  const auto p = SmallModel();
  const auto seq = PadSequence(ItemSequence{3, 4}, p.config.max_len);
  RowVector<double> v = RowVector<double>::Zero(p.config.dim);
  v(0) = 1.0;
  Intervention<double> iv{p.config.num_blocks, p.config.max_len - 1, [&v](RowVector<double>& x) { x += 2.0 * v; }};
  const auto base = ScoreItems(Forward(p, seq).user_embedding, p);
  const auto steered = ScoreItems(Forward(p, seq, false, &iv).user_embedding, p);
  for (int i = 0; i < p.config.catalog_size; ++i) {
    EXPECT_NEAR(steered(i) - base(i), 2.0 * p.item_embeddings(i, 0), 1e-12);
  }
}

TEST(ScoreItems, DotProducts) {
  const auto p = SmallModel();
  const RowVector<double> zero = RowVector<double>::Zero(p.config.dim);
  EXPECT_EQ(ScoreItems(zero, p).norm(), 0.0);
  const RowVector<double> ej = p.item_embeddings.row(6);
  EXPECT_NEAR(ScoreItems(ej, p)(6), ej.squaredNorm(), 1e-12);
}

TEST(ModelConfig, Validation) {
  auto c = TinyConfig();
  c.heads = 3;
  EXPECT_THROW(c.Validate(), ConfigError);
  c = TinyConfig();
  c.num_blocks = 0;
  EXPECT_THROW(c.Validate(), ConfigError);
  c = TinyConfig();
  c.dropout = 1.0;
  EXPECT_THROW(c.Validate(), ConfigError);
  EXPECT_EQ(ModelConfig::FromJson(TinyConfig().ToJson()), TinyConfig());
}

TEST(TopK, TiesExclusionAndErrors) {
  const std::vector<double> s{0.5, 0.9, 0.9, 0.1, 0.9};
  const auto r = TopK(s, 3, {});
  EXPECT_EQ(r.items, (std::vector<ItemId>{1, 2, 4}));
  EXPECT_EQ(TopK(s, 1, {}).items, (std::vector<ItemId>{1}));
  const auto mask = ExclusionMask(5, std::vector<ItemId>{1, 4});
  EXPECT_EQ(TopK(s, 2, mask).items, (std::vector<ItemId>{2, 0}));
  EXPECT_EQ(TopK(s, 3, mask).items, (std::vector<ItemId>{2, 0, 3}));
  EXPECT_THROW(TopK(s, 4, mask), ConfigError);
  for (std::size_t k = 1; k < r.scores.size(); ++k) EXPECT_GE(r.scores[k - 1], r.scores[k]);
}

TEST(TopK, RandomScoresSortedWithIdTieBreak) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s(40);
    for (auto& x : s) x = static_cast<double>(rng() % 6);
    const auto r = TopK(s, 15, {});
    for (std::size_t k = 1; k < r.items.size(); ++k) {
      EXPECT_TRUE(r.scores[k - 1] > r.scores[k] || (r.scores[k - 1] == r.scores[k] && r.items[k - 1] < r.items[k]));
    }
  }
}

TEST(RecommendTopK, ExcludeSeenForcesRemainder) {
  const auto p = SmallModel().Cast<float>();
  ItemSequence hist;
  for (ItemId i = 0; i < p.config.catalog_size - 2; ++i) hist.push_back(i);
  const auto r = RecommendTopK(p, hist, 2, true);
  std::vector<ItemId> got = r.items;
  std::sort(got.begin(), got.end());
  EXPECT_EQ(got, (std::vector<ItemId>{28, 29}));
  EXPECT_THROW(RecommendTopK(p, hist, 3, true), ConfigError);
}

TEST(RankingMetrics, Examples) {
  RecList r{{5, 3, 8, 1}, {4, 3, 2, 1}};
  EXPECT_EQ(RankOf(r, 8, 4), 3);
  EXPECT_DOUBLE_EQ(NdcgAtK(r, 5, 4), 1.0);
  EXPECT_DOUBLE_EQ(HitRateAtK(r, 5, 4), 1.0);
  EXPECT_DOUBLE_EQ(NdcgAtK(r, 8, 4), 0.5);
  EXPECT_DOUBLE_EQ(NdcgAtK(r, 9, 4), 0.0);
  EXPECT_DOUBLE_EQ(HitRateAtK(r, 9, 4), 0.0);
  EXPECT_DOUBLE_EQ(HitRateAtK(r, 1, 3), 0.0);
  for (ItemId t : {5, 3, 8, 1, 9}) {
    for (int k = 1; k <= 4; ++k) {
      const double n = NdcgAtK(r, t, k), h = HitRateAtK(r, t, k);
      EXPECT_GE(n, 0.0);
      EXPECT_LE(n, h);
      EXPECT_LE(h, 1.0);
    }
  }
}

TEST(Checkpoint, RoundTripAndErrors) {
  const auto dir = std::filesystem::temp_directory_path() / "popalign_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "m.bin").string();
  const auto p = SmallModel().Cast<float>();
  SaveCheckpoint(p, path, {{"seed", 5}});
  nlohmann::json meta;
  const auto back = LoadCheckpoint(path, p.config, &meta);
  EXPECT_EQ(meta["seed"], 5);
  EXPECT_EQ(back.config, p.config);
  std::vector<const Matrix<float>*> a, b;
  p.ForEachTensor([&](const std::string&, const Matrix<float>& m) { a.push_back(&m); });
  back.ForEachTensor([&](const std::string&, const Matrix<float>& m) { b.push_back(&m); });
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(*a[k], *b[k]);

  auto other = p.config;
  other.dim = 16;
  EXPECT_THROW(LoadCheckpoint(path, other), FormatError);

  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 10);
  EXPECT_THROW(LoadCheckpoint(path), FormatError);
  std::filesystem::remove_all(dir);
}

// Every user walks one shuffled cycle through the whole catalog.
std::vector<ItemSequence> MarkovSequences(int users, int items, int length, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ItemId> cycle(static_cast<std::size_t>(items));
  std::iota(cycle.begin(), cycle.end(), 0);
  std::shuffle(cycle.begin(), cycle.end(), rng);
  std::vector<ItemId> next(static_cast<std::size_t>(items));
  for (int k = 0; k < items; ++k) next[cycle[k]] = cycle[(k + 1) % items];
  std::vector<ItemSequence> out;
  for (int u = 0; u < users; ++u) {
    ItemSequence s{static_cast<ItemId>(rng() % items)};
    while (static_cast<int>(s.size()) < length) s.push_back(next[s.back()]);
    out.push_back(s);
  }
  return out;
}

TEST(Train, DeterministicAndDescends) {
  const auto log = corpus::InteractionLog::FromSequences(MarkovSequences(40, 30, 10, 2), 30);
  const auto split = corpus::LeaveOneOutSplit(log);
  auto cfg = TinyConfig();
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 16;
  tc.learning_rate = 0.01;
  tc.seed = 9;
  const auto a = Train(split, cfg, tc);
  const auto b = Train(split, cfg, tc);
  ASSERT_EQ(a.log.size(), 3u);
  EXPECT_EQ(a.log[0].loss, b.log[0].loss);
  EXPECT_EQ(a.params.item_embeddings, b.params.item_embeddings);
  EXPECT_LT(a.log.back().loss, a.log.front().loss);

  tc.learning_rate = -1;
  EXPECT_THROW(tc.Validate(), ConfigError);
}

TEST(Train, SingleStepLowersFrozenBatchLoss) {
  auto cfg = TinyConfig();
  auto params = ModelParams<double>::Initialize(cfg, 4);
  const auto batch = RandomBatch(cfg, 6, 5);
  auto grad = ModelParams<double>::Zeros(cfg);
  const double before = LossAndGradient<double>(params, batch, &grad);
  AdamOptimizer<double> adam(params, 1e-3, 0.9, 0.999, 1e-8);
  adam.Step(params, grad);
  EXPECT_LT(LossAndGradient<double>(params, batch, nullptr), before);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Train, NegativesAvoidHistory) {
  auto cfg = TinyConfig();
  auto batch = RandomBatch(cfg, 5, 8);
  std::mt19937_64 rng(1);
  TrainingExample ex = batch[0];
  const ItemSequence hist{0, 1, 2, 3, 4};
  SampleNegatives(ex, hist, cfg.catalog_size, 4, rng);
  for (std::size_t t = 0; t < ex.positives.size(); ++t) {
    if (ex.positives[t] == kPadItem) {
      EXPECT_TRUE(ex.negatives[t].empty());
      continue;
    }
    EXPECT_EQ(ex.negatives[t].size(), 4u);
    for (ItemId n : ex.negatives[t]) EXPECT_GE(n, 5);
  }
  ItemSequence everything;
  for (ItemId i = 0; i < cfg.catalog_size; ++i) everything.push_back(i);
  EXPECT_THROW(SampleNegatives(ex, everything, cfg.catalog_size, 1, rng), DataError);
}

TEST(Train, LearnsDeterministicSuccessor) {
  const int items = 50;
  const auto log = corpus::InteractionLog::FromSequences(MarkovSequences(300, items, 12, 6), items);
  const auto split = corpus::LeaveOneOutSplit(log);
  ModelConfig cfg;
  cfg.num_blocks = 1;
  cfg.dim = 32;
  cfg.max_len = 12;
  cfg.dropout = 0.0;
  cfg.catalog_size = items;
  TrainConfig tc;
  tc.epochs = 40;
  tc.batch_size = 32;
  tc.learning_rate = 0.005;
  tc.seed = 1;
  const auto trained = Train(split, cfg, tc);
  double hits = 0.0;
  for (UserId u = 0; u < log.num_users(); ++u) {
    ItemSequence ctx = split.train.sequence(u);
    ctx.push_back(split.valid[u]);
    const auto r = RecommendTopK(trained.params, ctx, 1, true);
    hits += HitRateAtK(r, split.test[u], 1);
  }
  EXPECT_GT(hits / log.num_users(), 0.9);
}

}  // namespace
}  // namespace popalign::seqrec
