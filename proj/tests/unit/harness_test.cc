#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <unistd.h>

#include "popalign/common/error.h"
#include "popalign/corpus/corpus.h"
#include "popalign/harness/evaluate.h"
#include "popalign/harness/pipeline.h"
#include "popalign/harness/sweep.h"
#include "popalign/harness/synthetic.h"
#include "popalign/metrics/metrics.h"
#include "popalign/metrics/report.h"

namespace popalign::harness {
namespace {

namespace fs = std::filesystem;

std::string TempPath(const std::string& name) {
  return (fs::temp_directory_path() / ("popalign_harness_" + std::to_string(::getpid())) / name).string();
}

std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Generator

double MeanRankPercentile(const SyntheticWorld& w, UserId u, int n_items) {
  double sum = 0.0;
  const auto& seq = w.log.sequence(u);
  for (ItemId i : seq) sum += RankPercentile(w.item_rank[static_cast<std::size_t>(i)], n_items);
  return sum / static_cast<double>(seq.size());
}

TEST(Synthetic, MainstreamUserHistoryIsPopular) {
  SyntheticWorldSpec spec;
  spec.n_users = 50;
  spec.n_items = 500;
  spec.user_preference_mix = {{1.0, 0.9, 0.0}};
  const auto w = MakeSyntheticWorld(spec);
  for (UserId u = 0; u < spec.n_users; ++u) EXPECT_GT(MeanRankPercentile(w, u, spec.n_items), 0.75);
}

TEST(Synthetic, SteepExponentConcentratesPopularity) {
  SyntheticWorldSpec spec;
  spec.n_users = 200;
  spec.n_items = 50;
  spec.popularity_exponent = 40.0;
  spec.popularity_coupling = 1.0;
  spec.follow_prob = 0.0;
  spec.kernel_width = 100.0;
  const auto w = MakeSyntheticWorld(spec);
  const auto pop = corpus::ComputePopularity(w.log);
  const double n = spec.n_items;
  EXPECT_NEAR(metrics::Gini(pop.s), (n - 1) / n, 1e-3);
}

TEST(Synthetic, SeededAndParsed) {
  SyntheticWorldSpec spec;
  spec.n_users = 30;
  spec.n_items = 100;
  spec.length_jitter = 5;
  EXPECT_EQ(MakeSyntheticWorld(spec).log, MakeSyntheticWorld(spec).log);
  spec.seed = 7;
  const auto other = MakeSyntheticWorld(spec);
  spec.seed = 42;
  EXPECT_NE(MakeSyntheticWorld(spec).log, other.log);

  const auto mix = ParsePreferenceMix("0.3:0.1:0.05,0.7:0.9:0.02:0.5");
  ASSERT_EQ(mix.size(), 2u);
  EXPECT_DOUBLE_EQ(mix[0].drift, 0.0);
  EXPECT_DOUBLE_EQ(mix[1].weight, 0.7);
  EXPECT_DOUBLE_EQ(mix[1].drift, 0.5);
  EXPECT_THROW(ParsePreferenceMix("0.3;0.1;0.05"), ConfigError);
  EXPECT_THROW(ParsePreferenceMix("1:0.5:0.1:x"), ConfigError);
  spec.popularity_exponent = 0.0;
  EXPECT_THROW(spec.Validate(), ConfigError);
}

TEST(Synthetic, MarkovWorldFollowsSuccessors) {
  const auto w = MakeMarkovWorld(20, 30, 8, 3);
  for (UserId u = 0; u < 20; ++u) {
    const auto& seq = w.log.sequence(u);
    ASSERT_EQ(seq.size(), 8u);
    for (std::size_t t = 1; t < seq.size(); ++t) EXPECT_EQ(seq[t], w.successor[static_cast<std::size_t>(seq[t - 1])]);
  }
}

// ---------------------------------------------------------------------------
// Calibration report sanity on hand-built histories

TEST(Calibration, OracleRecommenderHugsDiagonal) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> value(0, 1000);
  const auto grid = metrics::QuantileGrid::Default();
  const int n = 100;
  std::vector<metrics::CalibrationCurve> curves;
  int within = 0;
  for (int u = 0; u < 200; ++u) {
    std::vector<double> hist(n);
    for (auto& x : hist) x = value(rng);
    std::uniform_int_distribution<int> pick(0, n - 1);
    std::vector<double> recs(100);
    for (auto& x : recs) x = hist[static_cast<std::size_t>(pick(rng))];
    const auto c = metrics::ComputeCalibrationCurve(metrics::PopularityDist(hist), metrics::PopularityDist(recs), grid);
    double worst = 0.0;
    for (std::size_t j = 0; j < c.tau.size(); ++j) worst = std::max(worst, std::abs(c.tau_hat[j] - c.tau[j]));
    within += worst <= 2.0 / std::sqrt(n);
    curves.push_back(c);
  }
  EXPECT_GE(within, 190);
  const auto mean = metrics::MeanCurve(curves);
  for (std::size_t j = 1; j + 1 < mean.tau.size(); ++j) EXPECT_NEAR(mean.tau_hat[j], mean.tau[j], 2.0 / std::sqrt(n));
}

TEST(Calibration, DemotingRecommenderFallsBelowDiagonal) {
  std::vector<double> hist, recs;
  for (int i = 1; i <= 60; ++i) {
    hist.push_back(i);
    recs.push_back(i * 0.5);
  }
  const auto c = metrics::ComputeCalibrationCurve(metrics::PopularityDist(hist), metrics::PopularityDist(recs),
                                                  metrics::QuantileGrid::Default());
  for (std::size_t j = 2; j + 2 < c.tau.size(); ++j) EXPECT_LT(c.tau_hat[j], c.tau[j]);
}

// ---------------------------------------------------------------------------
// Ablation selection

TEST(Ablation, BudgetBoundaries) {
  const std::map<double, double> cands = {{0, 0.5}, {1, 0.48}, {2, 0.46}, {4, 0.40}, {8, 0.2}};
  EXPECT_EQ(SelectBudgetedStrength(cands, 0.5, 0.0), 0.0);
  EXPECT_EQ(SelectBudgetedStrength(cands, 0.5, 1.0), 8.0);
  EXPECT_EQ(SelectBudgetedStrength(cands, 0.5, 0.1), 2.0);
  EXPECT_EQ(SelectBudgetedStrength({{0, 0.5}, {1, 0.1}}, 0.5, 0.1), 0.0);
  EXPECT_THROW(SelectBudgetedStrength(cands, 0.5, -0.1), ConfigError);
}

TEST(Ablation, SelectorIsMonotoneInBudget) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::map<double, double> cands = {{0.0, 0.5}};
    for (double s : {1.0, 2.0, 4.0, 8.0, 16.0, 32.0}) cands[s] = 0.5 * u(rng) + 0.25;
    double prev = 0.0;
    for (double b = 0.0; b <= 1.0; b += 0.05) {
      const double sel = SelectBudgetedStrength(cands, 0.5, b);
      EXPECT_GE(sel, prev);
      prev = sel;
    }
  }
}

TEST(Sweep, SpecValidation) {
  SweepSpec s;
  s.strengths = {};
  s.seeds = {1};
  EXPECT_THROW(s.Validate(), ConfigError);
  s.strengths = {0.0};
  s.k = 0;
  EXPECT_THROW(s.Validate(), ConfigError);
  EXPECT_EQ(DefaultStrengths(EvalMethod::kSpree), (std::vector<double>{0, 1, 2, 4, 8, 16, 32}));
  EXPECT_EQ(DefaultStrengths(EvalMethod::kIpr).size(), 11u);
  EXPECT_DOUBLE_EQ(MaxStrength(EvalMethod::kPopSteer), 1.0);
  EXPECT_THROW(ParseEvalMethod("oracle"), ConfigError);
}

// ---------------------------------------------------------------------------
// Pipeline on a tiny world, trained once for the suite

constexpr const char* kTinyConfig = R"(
seeds = 3,4
data.synthetic = true
synthetic.n_users = 150
synthetic.n_items = 200
synthetic.mix = 0.5:0.15:0.05,0.5:0.85:0.05
synthetic.length = 20
synthetic.band_size = 20
model.blocks = 1
model.dim = 16
model.max_len = 24
train.epochs = 6
train.batch_size = 32
train.learning_rate = 0.005
spree.num_sequences = 150
spree.pad_prefix = 8
spree.probe_positions = 8,16,23
sae.enabled = true
sae.latent_dim = 32
sae.k = 4
sae.learning_rate = 0.005
sae.max_epochs = 20
sae.sequences = 100
eval.k = 20
)";

PipelineConfig TinyConfig(const std::string& out_dir) {
  auto kv = KeyValueConfig::Parse(std::string(kTinyConfig) + "out_dir = " + out_dir + "\n");
  return PipelineConfig::FromKeyValue(kv);
}

class PipelineTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::create_directories(TempPath(""));
    artifacts_ = new Artifacts(RunPipeline(TinyConfig(TempPath("run_a"))));
    for (auto seed : artifacts_->config.seeds) contexts_[seed] = artifacts_->Context(seed);
  }
  static void TearDownTestSuite() {
    delete artifacts_;
    artifacts_ = nullptr;
    contexts_.clear();
    fs::remove_all(TempPath(""));
  }

  static ContextProvider Provider() {
    return [](std::uint64_t seed) -> const EvalContext& { return contexts_.at(seed); };
  }

  static Artifacts* artifacts_;
  static std::map<std::uint64_t, EvalContext> contexts_;
};

Artifacts* PipelineTest::artifacts_ = nullptr;
std::map<std::uint64_t, EvalContext> PipelineTest::contexts_;

TEST_F(PipelineTest, WritesStampedArtifacts) {
  const auto& dir = artifacts_->dir;
  for (const char* f : {"config.txt", "data.tsv", "id_map.json", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(fs::path(dir) / f)) << f;
  }
  const auto hash = artifacts_->config.Hash();
  for (auto seed : artifacts_->config.seeds) {
    const auto sd = SeedDir(dir, seed);
    for (const char* f : {"checkpoint.bin", "steering.bin", "sae.bin", "train_log.csv", "probe_grid.csv"}) {
      EXPECT_TRUE(fs::exists(fs::path(sd) / f)) << f;
    }
    const auto log = ReadFile((fs::path(sd) / "train_log.csv").string());
    EXPECT_NE(log.find("config_hash=" + hash), std::string::npos);
    EXPECT_NE(log.find("seed=" + std::to_string(seed)), std::string::npos);
  }
  const auto reloaded = LoadArtifacts(dir, true);
  EXPECT_EQ(reloaded.log, artifacts_->log);
  EXPECT_EQ(reloaded.seeds.size(), 2u);
  EXPECT_EQ(reloaded.ForSeed(4).steering->site, artifacts_->ForSeed(4).steering->site);
}

TEST_F(PipelineTest, SweepCardinalityAndZeroStrengthIdentity) {
  const std::vector<std::uint64_t> seeds = artifacts_->config.seeds;
  std::vector<SweepSpec> specs;
  for (auto m : {EvalMethod::kBase, EvalMethod::kSpree, EvalMethod::kSpreeVanilla, EvalMethod::kIpr, EvalMethod::kPp}) {
    SweepSpec s;
    s.method = m;
    s.strengths = m == EvalMethod::kBase ? std::vector<double>{0.0} : std::vector<double>{0.0, 0.5};
    s.k = 20;
    s.seeds = seeds;
    s.metrics = {"gini", "coverage", "upd"};
    specs.push_back(s);
  }
  const auto table = Sweep(specs, Provider());
  EXPECT_EQ(table.rows.size(), (1 + 4 * 2) * seeds.size());
  EXPECT_EQ(table.summary.size(), 1u + 4 * 2);
  const auto* base = FindSummary(table, "base", 0.0);
  ASSERT_NE(base, nullptr);
  for (const char* m : {"spree", "spree_vanilla", "ipr", "pp"}) {
    const auto* row = FindSummary(table, m, 0.0);
    ASSERT_NE(row, nullptr) << m;
    for (const auto& [name, value] : base->metrics) EXPECT_NEAR(row->metrics.at(name), value, 1e-9) << m << " " << name;
  }
  for (const auto& c : {"ndcg", "hr", "pce", "alrp", "gini", "coverage", "upd"}) {
    EXPECT_NE(std::find(table.columns.begin(), table.columns.end(), c), table.columns.end()) << c;
  }
}

TEST_F(PipelineTest, BaselineBoundariesOnTrainedModel) {
  const auto& ctx = contexts_.at(3);
  for (UserId u = 0; u < 20; ++u) {
    const auto base = RecommendFor(ctx, EvalMethod::kBase, 0.0, 20, u, 1);
    EXPECT_EQ(RecommendFor(ctx, EvalMethod::kRandomNeighbors, 0.0, 20, u, 9).items, base.items);
    EXPECT_EQ(RecommendFor(ctx, EvalMethod::kIpr, 0.0, 20, u, 1).items, base.items);
    EXPECT_EQ(RecommendFor(ctx, EvalMethod::kPp, 0.0, 20, u, 1).items, base.items);
  }
  EvalContext open = ctx;
  open.exclude_seen = false;
  for (UserId u = 0; u < 20; ++u) {
    const auto& history = open.split->train.sequence(u);
    const auto pp = RecommendFor(open, EvalMethod::kPp, 1.0, 3, u, 1);
    std::map<ItemId, int> counts;
    for (ItemId i : history) ++counts[i];
    int top = 0;
    for (const auto& [i, c] : counts) top = std::max(top, c);
    EXPECT_EQ(counts[pp.items[0]], top);
    for (ItemId i : pp.items) EXPECT_GT(counts[i], 0);
  }
}

TEST(PpSweep, DegradesNdcgOnNonRepetitiveData) {
  const auto world = MakeMarkovWorld(150, 60, 15, 2);
  const auto split = corpus::LeaveOneOutSplit(world.log);
  const auto cfg = TinyConfig(TempPath("markov"));
  const auto trained = TrainStage(cfg, split, 5);
  EvalContext ctx;
  ctx.params = &trained.params;
  ctx.split = &split;
  ctx.popularity = corpus::ComputePopularity(split.train).s;
  ctx.exclude_seen = false;
  double prev = 1.0;
  double first = 0.0;
  for (double a = 0.0; a <= 1.0 + 1e-9; a += 0.1) {
    const double ndcg = Evaluate(ctx, EvalMethod::kPp, a, 20, 5).aggregates.at("ndcg");
    if (a == 0.0) first = ndcg;
    EXPECT_LE(ndcg, prev + 1e-9) << a;
    prev = ndcg;
  }
  EXPECT_LT(prev, first);
  fs::remove_all(TempPath(""));
}

TEST_F(PipelineTest, AblationBudgetExtremes) {
  std::vector<SweepSpec> specs;
  for (auto m : {EvalMethod::kSpree, EvalMethod::kSpreeVanilla}) {
    SweepSpec s;
    s.method = m;
    s.strengths = {0, 1, 4};
    s.k = 20;
    s.seeds = {3};
    specs.push_back(s);
  }
  const auto table = Sweep(specs, Provider());
  const auto none = BuildAblationTable(table, 0.0);
  for (const auto& r : none.rows) {
    EXPECT_EQ(r.strength, 0.0);
    EXPECT_EQ(r.pce_delta_pct, 0.0);
    EXPECT_EQ(r.alrp_delta_pct, 0.0);
  }
  const auto all = BuildAblationTable(table, 1.0);
  ASSERT_EQ(all.rows.size(), 2u);
  for (const auto& r : all.rows) EXPECT_EQ(r.strength, 4.0);
  EXPECT_NE(FormatAblationTable(all).find("%"), std::string::npos);
}

TEST_F(PipelineTest, CalibrationReportBaseAgainstItself) {
  const auto entries = CalibrationReport({{EvalMethod::kBase, 0.0}, {EvalMethod::kBase, 0.0}}, 20, {3, 4}, Provider());
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[0].mean_curve.tau_hat, entries[1].mean_curve.tau_hat);
  const auto path = TempPath("calib.csv");
  WriteCalibrationReportCsv(path, entries, artifacts_->config.Stamp(std::nullopt));
  EXPECT_NE(ReadFile(path).find("diagonal"), std::string::npos);
}

TEST_F(PipelineTest, PopsteerNeedsItsArtifacts) {
  EvalContext ctx = contexts_.at(3);
  EXPECT_NO_THROW(CheckPrerequisites(ctx, EvalMethod::kPopSteer));
  ctx.sae = nullptr;
  EXPECT_THROW(CheckPrerequisites(ctx, EvalMethod::kPopSteer), ConfigError);
  ctx.steering = nullptr;
  EXPECT_THROW(Evaluate(ctx, EvalMethod::kSpree, 1.0, 20, 3), ConfigError);
}

TEST_F(PipelineTest, RerunIsByteIdentical) {
  const auto again = RunPipeline(TinyConfig(TempPath("run_b")));
  const auto sweep_csv = [](const Artifacts& a, const std::string& path) {
    std::map<std::uint64_t, EvalContext> ctxs;
    for (auto s : a.config.seeds) ctxs[s] = a.Context(s);
    SweepSpec spec;
    spec.method = EvalMethod::kSpree;
    spec.strengths = {0, 2};
    spec.k = 20;
    spec.seeds = a.config.seeds;
    const auto table = Sweep({spec}, [&](std::uint64_t s) -> const EvalContext& { return ctxs.at(s); });
    WriteSweepCsv(path, table, a.config.Stamp(std::nullopt));
    return ReadFile(path);
  };
  EXPECT_EQ(sweep_csv(*artifacts_, TempPath("a.csv")), sweep_csv(again, TempPath("b.csv")));
  for (auto seed : again.config.seeds) {
    for (const char* f : {"checkpoint.bin", "train_log.csv", "probe_grid.csv"}) {
      EXPECT_EQ(ReadFile((fs::path(SeedDir(artifacts_->dir, seed)) / f).string()),
                ReadFile((fs::path(SeedDir(again.dir, seed)) / f).string()))
          << f;
    }
  }
}

// ---------------------------------------------------------------------------
// Config and stage errors

TEST(PipelineConfig, MissingDatasetFailsBeforeCompute) {
  EXPECT_THROW(PipelineConfig::FromKeyValue(KeyValueConfig::Parse("data.path = /no/such/file.tsv\n")), ConfigError);
  EXPECT_THROW(PipelineConfig::FromKeyValue(KeyValueConfig::Parse("seeds = 1\n")), ConfigError);
  EXPECT_THROW(PipelineConfig::FromKeyValue(KeyValueConfig::Parse("data.synthetic = true\nmodel.dim = -4\n")),
               ConfigError);
}

TEST(PipelineConfig, HashIgnoresOutputDirectory) {
  EXPECT_EQ(TinyConfig("x").Hash(), TinyConfig("y").Hash());
  auto kv = KeyValueConfig::Parse(std::string(kTinyConfig) + "train.epochs = 7\n");
  EXPECT_NE(PipelineConfig::FromKeyValue(kv).Hash(), TinyConfig("x").Hash());
}

TEST(PipelineConfig, StageFailureNamesTheStage) {
  fs::create_directories(TempPath(""));
  const auto data = TempPath("garbage.tsv");
  std::ofstream(data) << "not\ta\tnumber\n";
  const auto cfg = PipelineConfig::FromKeyValue(
      KeyValueConfig::Parse("data.path = " + data + "\nout_dir = " + TempPath("bad_run") + "\n"));
  try {
    RunPipeline(cfg);
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "ingest");
  }
  fs::remove_all(TempPath(""));
}

}  // namespace
}  // namespace popalign::harness
