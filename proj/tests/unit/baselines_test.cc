#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <unistd.h>

#include "popalign/baselines/baselines.h"
#include "popalign/common/error.h"

namespace popalign::baselines {
namespace {

std::vector<double> RandomLogits(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 2.0);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (auto& x : out) x = g(rng);
  return out;
}

std::vector<ItemId> TopItems(const std::vector<double>& scores, int k) {
  return seqrec::TopK(scores, k, {}).items;
}

TEST(Ipr, SpecExamples) {
  const std::vector<std::int64_t> pop = {10, 0, 5};
  const std::vector<double> logits = {4.0, 3.0, -2.0};
  EXPECT_EQ(IprRescale(logits, pop, 0.0), logits);
  const auto full = IprRescale(logits, pop, 1.0);
  EXPECT_DOUBLE_EQ(full[0], 2.0);
  EXPECT_DOUBLE_EQ(full[1], 3.0);
  EXPECT_DOUBLE_EQ(full[2], -3.0);
}

TEST(Ipr, OrderPreservedWithinEqualPopularity) {
  std::mt19937_64 rng(1);
  std::vector<std::int64_t> pop(40);
  for (std::size_t i = 0; i < pop.size(); ++i) pop[i] = static_cast<std::int64_t>(i % 4) * 3;
  const auto logits = RandomLogits(40, rng);
  for (double alpha : {0.1, 0.5, 1.0}) {
    const auto out = IprRescale(logits, pop, alpha);
    for (std::size_t i = 0; i < pop.size(); ++i) {
      for (std::size_t j = 0; j < pop.size(); ++j) {
        if (pop[i] == pop[j] && logits[i] < logits[j]) {
          EXPECT_LT(out[i], out[j]);
        }
      }
    }
  }
}

TEST(Ipr, MorePopularNeverOutranksOnEqualLogits) {
  const std::vector<std::int64_t> pop = {1, 9, 4, 0};
  for (double base : {2.5, -1.5}) {
    const std::vector<double> logits(4, base);
    const auto out = IprRescale(logits, pop, 0.7);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        if (pop[static_cast<std::size_t>(i)] > pop[static_cast<std::size_t>(j)]) {
          EXPECT_LE(out[static_cast<std::size_t>(i)], out[static_cast<std::size_t>(j)]);
        }
      }
    }
  }
}

TEST(Pp, PersonalPopularityRanks) {
  const std::vector<ItemId> hist = {2, 2, 2, 2, 2, 0, 3};
  const auto s = PersonalPopularity(hist, 5);
  EXPECT_DOUBLE_EQ(s[2], 1.0);
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[3], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.0);
  EXPECT_DOUBLE_EQ(s[4], 0.0);
}

TEST(Pp, Boundaries) {
  std::mt19937_64 rng(2);
  const auto logits = RandomLogits(30, rng);
  const std::vector<ItemId> hist = {7, 7, 7, 3, 3, 11, 20};
  EXPECT_EQ(TopItems(PpInterpolate(logits, hist, 0.0), 10), TopItems(logits, 10));
  const auto full = PpInterpolate(logits, hist, 1.0);
  EXPECT_EQ(TopItems(full, 4), (std::vector<ItemId>{7, 3, 11, 20}));
  std::vector<double> other = RandomLogits(30, rng);
  EXPECT_EQ(PpInterpolate(other, hist, 1.0), full);
  for (double x : PpInterpolate(std::vector<double>(30, 1.0), hist, 0.0)) EXPECT_EQ(x, 0.0);
}

TEST(RandomNeighbors, ZeroAlphaIsBaseTopK) {
  std::mt19937_64 rng(3);
  const auto scores = RandomLogits(60, rng);
  std::vector<char> excluded(60, 0);
  excluded[static_cast<std::size_t>(TopItems(scores, 1)[0])] = 1;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto got = RandomNeighbors(scores, 10, 0.0, seed, excluded);
    const auto base = seqrec::TopK(scores, 10, excluded);
    EXPECT_EQ(got.items, base.items);
    EXPECT_EQ(got.scores, base.scores);
  }
  EXPECT_EQ(NeighborhoodSize(50, 1.0), 100);
  EXPECT_EQ(NeighborhoodSize(10, 0.25), 13);
}

TEST(RandomNeighbors, UniformOverNeighborhood) {
  std::mt19937_64 rng(4);
  const auto scores = RandomLogits(80, rng);
  const int k = 10;
  const int m = NeighborhoodSize(k, 1.0);
  const auto hood = TopItems(scores, m);
  const std::set<ItemId> hood_set(hood.begin(), hood.end());
  std::map<ItemId, int> hits;
  const int draws = 1000;
  for (int d = 0; d < draws; ++d) {
    const auto r = RandomNeighbors(scores, k, 1.0, static_cast<std::uint64_t>(d));
    ASSERT_EQ(r.items.size(), static_cast<std::size_t>(k));
    EXPECT_TRUE(std::is_sorted(r.scores.rbegin(), r.scores.rend()));
    EXPECT_EQ(std::set<ItemId>(r.items.begin(), r.items.end()).size(), static_cast<std::size_t>(k));
    for (ItemId i : r.items) {
      EXPECT_TRUE(hood_set.count(i));
      ++hits[i];
    }
  }
  const double p = static_cast<double>(k) / m;
  const double sigma = std::sqrt(p * (1 - p) / draws);
  for (ItemId i : hood) EXPECT_NEAR(hits[i] / static_cast<double>(draws), p, 3 * sigma) << i;
  EXPECT_EQ(RandomNeighbors(scores, k, 1.0, 7).items, RandomNeighbors(scores, k, 1.0, 7).items);
}

TEST(Config, StrengthRange) {
  BaselineConfig cfg;
  cfg.strength = 1.0;
  EXPECT_NO_THROW(cfg.Validate());
  cfg.strength = 1.5;
  EXPECT_THROW(cfg.Validate(), ConfigError);
  EXPECT_EQ(ParseMethod(MethodName(Method::kRandomNeighbors)), Method::kRandomNeighbors);
  EXPECT_THROW(ParseMethod("dropout"), ConfigError);
}

Eigen::MatrixXd Whitened(int n, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  return x;
}

TEST(Sae, EncodeKeepsExactlyK) {
  SparseAutoencoder sae;
  sae.encoder = Whitened(4, 12, 1);
  sae.encoder_bias = Eigen::RowVectorXd::Zero(12);
  sae.decoder = Whitened(12, 4, 2);
  sae.decoder_bias = Eigen::RowVectorXd::Zero(4);
  sae.k = 3;
  const auto x = Whitened(20, 4, 3);
  for (int i = 0; i < 20; ++i) {
    const auto z = sae.Encode(x.row(i));
    EXPECT_EQ((z.array() != 0.0).count(), 3);
    const Eigen::RowVectorXd pre = x.row(i) * sae.encoder;
    const double smallest_kept = (z.array() != 0.0).select(pre.array(), 1e300).minCoeff();
    const double largest_dropped = (z.array() == 0.0).select(pre.array(), -1e300).maxCoeff();
    EXPECT_GE(smallest_kept, largest_dropped);
  }
  sae.encoder_bias = Eigen::RowVectorXd::Zero(12);
  sae.encoder = Eigen::MatrixXd::Zero(4, 12);
  const auto z = sae.Encode(x.row(0));
  EXPECT_EQ((z.array() != 0.0).count(), 0);
}

TEST(Sae, FullWidthLearnsIdentity) {
  const auto x = Whitened(400, 6, 4);
  SaeConfig cfg;
  cfg.latent_dim = 6;
  cfg.k = 6;
  cfg.learning_rate = 1e-2;
  cfg.max_epochs = 300;
  cfg.patience = 300;
  const auto r = TrainSae(x, cfg);
  EXPECT_LT(r.valid_mse, 0.01);
  EXPECT_NEAR(ReconstructionMse(r.sae, x), r.train_mse * 0.9 + r.valid_mse * 0.1, 0.01);
}

TEST(Sae, EarlyStoppingHonorsPatience) {
  const auto x = Whitened(200, 4, 5);
  SaeConfig cfg;
  cfg.latent_dim = 8;
  cfg.k = 2;
  cfg.learning_rate = 0.2;
  cfg.max_epochs = 400;
  cfg.patience = 3;
  const auto r = TrainSae(x, cfg);
  ASSERT_TRUE(r.stopped_early);
  EXPECT_EQ(r.epochs_run - r.best_epoch, cfg.patience);
  EXPECT_EQ(static_cast<int>(r.valid_curve.size()), r.epochs_run);
  const double best = *std::min_element(r.valid_curve.begin(), r.valid_curve.end());
  EXPECT_DOUBLE_EQ(best, r.valid_curve[static_cast<std::size_t>(r.best_epoch - 1)]);
}

TEST(Sae, RejectsTinyInput) {
  EXPECT_THROW(TrainSae(Whitened(50, 4, 6), SaeConfig{}), DataError);
  SaeConfig bad;
  bad.k = bad.latent_dim + 1;
  EXPECT_THROW(bad.Validate(4), ConfigError);
}

class PopSteerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    SaeConfig cfg;
    cfg.latent_dim = 16;
    cfg.k = 4;
    cfg.learning_rate = 5e-3;
    cfg.max_epochs = 60;
    Eigen::MatrixXd x = Whitened(300, 6, 8);
    x.topRows(150).col(0).array() += 2.0;
    sae_ = TrainSae(x, cfg).sae;
    popular_ = x.topRows(150);
    niche_ = x.bottomRows(150);
    scores_ = LatentPopularityScores(sae_, popular_, niche_);
  }

  SparseAutoencoder sae_;
  Eigen::MatrixXd popular_, niche_;
  std::vector<double> scores_;
};

TEST_F(PopSteerTest, ZeroStrengthIsReconstruction) {
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(PopSteerApply(popular_.row(i), sae_, scores_, 0.0), sae_.Reconstruct(popular_.row(i)));
  }
}

TEST_F(PopSteerTest, FullStrengthZeroesEveryFlaggedLatent) {
  std::vector<int> flagged;
  for (int j = 0; j < static_cast<int>(scores_.size()); ++j) {
    if (scores_[static_cast<std::size_t>(j)] > kLatentSignificance) flagged.push_back(j);
  }
  ASSERT_FALSE(flagged.empty());
  for (int i = 0; i < 10; ++i) {
    const auto h = popular_.row(i);
    EXPECT_TRUE(PopSteerApply(h, sae_, scores_, 1.0).isApprox(AblateLatents(h, sae_, flagged), 1e-12));
  }
}

TEST_F(PopSteerTest, ScoresAreCorrelations) {
  for (double s : scores_) {
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
  }
  const auto swapped = LatentPopularityScores(sae_, niche_, popular_);
  for (std::size_t j = 0; j < scores_.size(); ++j) EXPECT_NEAR(swapped[j], -scores_[j], 1e-12);
}

TEST_F(PopSteerTest, SaveLoadRoundTrip) {
  const auto path =
      (std::filesystem::temp_directory_path() / ("popalign_sae_" + std::to_string(::getpid()))).string();
  SaveSae(sae_, scores_, path, {{"note", 1}});
  std::vector<double> scores;
  nlohmann::json meta;
  const auto back = LoadSae(path, &scores, &meta);
  std::filesystem::remove(path);
  EXPECT_EQ(back.k, sae_.k);
  EXPECT_TRUE(back.encoder.isApprox(sae_.encoder, 1e-6));
  EXPECT_TRUE(back.decoder_bias.isApprox(sae_.decoder_bias, 1e-6));
  ASSERT_EQ(scores.size(), scores_.size());
  for (std::size_t j = 0; j < scores.size(); ++j) EXPECT_NEAR(scores[j], scores_[j], 1e-6);
  EXPECT_EQ(meta["note"], 1);
}

}  // namespace
}  // namespace popalign::baselines
