// popalign: command-line front end for ingest, training, steering and reports.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "popalign/common/csv.h"
#include "popalign/common/error.h"
#include "popalign/common/kv_config.h"
#include "popalign/corpus/corpus.h"
#include "popalign/harness/evaluate.h"
#include "popalign/harness/pipeline.h"
#include "popalign/harness/sweep.h"
#include "popalign/harness/synthetic.h"
#include "popalign/metrics/report.h"

namespace fs = std::filesystem;
using namespace popalign;

namespace {

struct Overrides {
  std::optional<std::int64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> k;
};

void Log(const std::string& line) { std::cerr << line << std::endl; }

harness::PipelineConfig LoadConfig(const std::string& path, const Overrides& o) {
  auto raw = KeyValueConfig::Load(path);
  if (o.seed) {
    raw.Set("seeds", std::to_string(*o.seed));
    raw.Set("seed", std::to_string(*o.seed));
  }
  if (o.out_dir) raw.Set("out_dir", *o.out_dir);
  if (o.k) raw.Set("eval.k", std::to_string(*o.k));
  return harness::PipelineConfig::FromKeyValue(raw);
}

std::vector<std::uint64_t> SeedsFor(const harness::Artifacts& art, const Overrides& o) {
  if (o.seed) return {static_cast<std::uint64_t>(*o.seed)};
  std::vector<std::uint64_t> seeds;
  for (const auto& s : art.seeds) seeds.push_back(s.seed);
  if (seeds.empty()) throw ConfigError("no trained seeds in " + art.dir + "; run train first");
  return seeds;
}

std::string OutDir(const harness::Artifacts& art, const Overrides& o) {
  const std::string dir = o.out_dir.value_or(art.dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::string> SplitList(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

std::vector<double> ParseStrengths(const std::string& text) {
  std::vector<double> out;
  for (const auto& p : SplitList(text)) {
    try {
      out.push_back(std::stod(p));
    } catch (const std::exception&) {
      throw ConfigError("bad strength '" + p + "'");
    }
  }
  return out;
}

harness::ContextProvider Provider(const harness::Artifacts& art, std::map<std::uint64_t, harness::EvalContext>& cache,
                                  std::optional<bool> exclude_seen) {
  return [&art, &cache, exclude_seen](std::uint64_t seed) -> const harness::EvalContext& {
    auto it = cache.find(seed);
    if (it == cache.end()) {
      auto ctx = art.Context(seed);
      if (exclude_seen) ctx.exclude_seen = *exclude_seen;
      it = cache.emplace(seed, std::move(ctx)).first;
    }
    return it->second;
  };
}

int Run(int argc, char** argv) {
  CLI::App app{"Popularity calibration metrics and steering for sequential recommenders"};
  app.require_subcommand(1);
  Overrides o;
  std::int64_t seed_value = 0;
  std::string out_dir_value;
  int k_value = 0;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed_value, "Seed override")->check(CLI::NonNegativeNumber);
    sub->add_option("--out-dir", out_dir_value, "Output directory");
    sub->add_option("--k", k_value, "Cut-off K")->check(CLI::PositiveNumber);
  };

  std::string config_path, run_dir, method = "base", methods, strengths, metric_list, phase = "test";
  double strength = 0.0, budget = 0.1;
  std::string exclude_flag;

  auto* ingest = app.add_subcommand("ingest", "Load (or generate) interactions and write the ingested copy");
  ingest->add_option("--config", config_path, "key = value config file")->required();
  add_common(ingest);

  auto* train = app.add_subcommand("train", "Train the base recommender for every seed");
  train->add_option("--config", config_path)->required();
  add_common(train);

  auto* steer = app.add_subcommand("steer-fit", "Fit steering artifacts (and the SAE when enabled)");
  steer->add_option("--config", config_path)->required();
  add_common(steer);

  auto* run = app.add_subcommand("run", "ingest, train and steer-fit in one go");
  run->add_option("--config", config_path)->required();
  add_common(run);

  auto* rec = app.add_subcommand("recommend", "Write top-K lists for a method");
  rec->add_option("--run", run_dir, "Run directory")->required();
  rec->add_option("--method", method);
  rec->add_option("--strength", strength);
  rec->add_option("--phase", phase)->check(CLI::IsMember({"test", "valid"}));
  add_common(rec);

  auto* met = app.add_subcommand("metrics", "Per-user metrics, aggregates and calibration curves for a method");
  met->add_option("--run", run_dir)->required();
  met->add_option("--method", method);
  met->add_option("--strength", strength);
  met->add_option("--exclude-seen", exclude_flag)->check(CLI::IsMember({"true", "false"}));
  add_common(met);

  auto* sweep = app.add_subcommand("sweep", "Strength sweeps producing a Pareto table");
  sweep->add_option("--run", run_dir)->required();
  sweep->add_option("--methods", methods, "Comma separated methods")->required();
  sweep->add_option("--strengths", strengths, "Comma separated strengths (default grid per method)");
  sweep->add_option("--metrics", metric_list, "Extra metric columns");
  sweep->add_option("--exclude-seen", exclude_flag)->check(CLI::IsMember({"true", "false"}));
  add_common(sweep);

  auto* calib = app.add_subcommand("calib-report", "Mean calibration curves per method at max strength");
  calib->add_option("--run", run_dir)->required();
  calib->add_option("--methods", methods);
  add_common(calib);

  auto* ablate = app.add_subcommand("ablate", "Budgeted vanilla vs adaptive steering table");
  ablate->add_option("--run", run_dir)->required();
  ablate->add_option("--budget", budget, "Allowed relative NDCG loss")->check(CLI::Range(0.0, 1.0));
  ablate->add_option("--strengths", strengths);
  add_common(ablate);

  auto* synth = app.add_subcommand("synth", "Write a synthetic interaction log");
  synth->add_option("--config", config_path, "Config with synthetic.* keys");
  add_common(synth);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  for (auto* sub : app.get_subcommands()) {
    if (sub->count("--seed")) o.seed = seed_value;
    if (sub->count("--out-dir")) o.out_dir = out_dir_value;
    if (sub->count("--k")) o.k = k_value;
  }

  std::optional<bool> exclude;
  if (!exclude_flag.empty()) exclude = exclude_flag == "true";

  if (*ingest || *run || *train || *steer) {
    const auto cfg = LoadConfig(config_path, o);
    if (*run) {
      harness::RunPipeline(cfg, Log);
      return 0;
    }
    if (*ingest) {
      harness::IngestStage(cfg, Log);
      return 0;
    }
    const auto log = harness::LoadIngested(cfg.out_dir);
    const auto split = corpus::LeaveOneOutSplit(log);
    const auto pop = corpus::ComputePopularity(log, split, cfg.popularity_source).s;
    if (*train) {
      for (auto seed : cfg.seeds) harness::TrainStage(cfg, split, seed, Log);
      return 0;
    }
    auto art = harness::LoadArtifacts(cfg.out_dir);
    for (auto seed : cfg.seeds) art.ForSeed(seed);
    for (auto& s : art.seeds) harness::SteerFitStage(cfg, split, pop, s, Log);
    return 0;
  }

  if (*synth) {
    KeyValueConfig raw = config_path.empty() ? KeyValueConfig() : KeyValueConfig::Load(config_path);
    if (o.seed) raw.Set("synthetic.seed", std::to_string(*o.seed));
    const auto spec = harness::SyntheticWorldSpec::FromKeyValue(raw);
    const auto world = harness::MakeSyntheticWorld(spec);
    const std::string dir = o.out_dir.value_or(".");
    fs::create_directories(dir);
    const std::string path = (fs::path(dir) / "synthetic.tsv").string();
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "user\titem\ttimestamp\n";
    for (const auto& e : world.log.Interactions()) out << e.user_id << '\t' << e.item_id << '\t' << e.timestamp << '\n';
    std::vector<std::vector<std::string>> rows;
    for (std::size_t u = 0; u < world.target_quantile.size(); ++u) {
      rows.push_back({std::to_string(u), FormatNumber(world.target_quantile[u])});
    }
    CsvWriter::WriteWithPreamble((fs::path(dir) / "synthetic_users.csv").string(),
                                 {"synthetic_seed=" + std::to_string(spec.seed)}, {"user", "target_quantile"}, rows);
    Log("[synth] wrote " + path);
    return 0;
  }

  const auto art = harness::LoadArtifacts(run_dir);
  const auto seeds = SeedsFor(art, o);
  const int k = o.k.value_or(art.config.eval_k);
  const std::string out = OutDir(art, o);
  std::map<std::uint64_t, harness::EvalContext> cache;
  const auto provider = Provider(art, cache, exclude);
  const auto stamp = [&](std::optional<std::uint64_t> seed) { return art.config.Stamp(seed); };

  if (*rec || *met) {
    const auto m = harness::ParseEvalMethod(method);
    const auto ph = phase == "valid" ? harness::Phase::kValidation : harness::Phase::kTest;
    for (auto seed : seeds) {
      const auto result = harness::Evaluate(provider(seed), m, strength, k, seed, ph);
      const std::string tag = method + "_" + FormatNumber(strength) + "_seed" + std::to_string(seed);
      if (*rec) {
        harness::WriteRecListsCsv((fs::path(out) / ("recs_" + tag + ".csv")).string(), art.log, result, stamp(seed));
        continue;
      }
      std::vector<metrics::UserMetric> rows;
      std::vector<metrics::CalibrationCurve> curves;
      for (const auto& u : result.users) {
        for (const auto& [name, value] : u.metrics) rows.push_back({u.user, name, value});
        curves.push_back(u.curve);
      }
      metrics::WriteUserMetricsCsv((fs::path(out) / ("metrics_" + tag + ".csv")).string(), rows, stamp(seed));
      metrics::WriteCalibrationCsv((fs::path(out) / ("calibration_" + tag + ".csv")).string(), curves, stamp(seed));
      metrics::WriteAggregatesJson((fs::path(out) / ("aggregates_" + tag + ".json")).string(), result.aggregates,
                                   {{"config_hash", art.config.Hash()}, {"seed", seed}, {"method", method},
                                    {"strength", strength}, {"k", k}, {"log_clamped", result.log_clamped}});
      for (const auto& [name, value] : result.aggregates) std::cout << tag << '\t' << name << '\t' << value << '\n';
    }
    return 0;
  }

  if (*sweep) {
    std::vector<harness::SweepSpec> specs;
    for (const auto& name : SplitList(methods)) {
      harness::SweepSpec spec;
      spec.method = harness::ParseEvalMethod(name);
      spec.strengths = strengths.empty() ? harness::DefaultStrengths(spec.method) : ParseStrengths(strengths);
      spec.k = k;
      spec.seeds = seeds;
      spec.metrics = SplitList(metric_list);
      specs.push_back(spec);
    }
    const auto table = harness::Sweep(specs, provider);
    const std::string path = (fs::path(out) / "sweep.csv").string();
    harness::WriteSweepCsv(path, table, stamp(std::nullopt));
    Log("[sweep] wrote " + path);
    return 0;
  }

  if (*calib) {
    std::vector<std::pair<harness::EvalMethod, double>> list;
    const std::string names = methods.empty() ? "base,spree,spree_vanilla,ipr,pp,random_neighbors,popsteer" : methods;
    for (const auto& name : SplitList(names)) {
      const auto m = harness::ParseEvalMethod(name);
      if (m == harness::EvalMethod::kPopSteer && !provider(seeds.front()).sae) {
        if (methods.empty()) continue;
      }
      list.emplace_back(m, harness::MaxStrength(m));
    }
    const auto entries = harness::CalibrationReport(list, k, seeds, provider);
    const std::string path = (fs::path(out) / "calibration_report.csv").string();
    harness::WriteCalibrationReportCsv(path, entries, stamp(std::nullopt));
    Log("[calib-report] wrote " + path);
    return 0;
  }

  if (*ablate) {
    std::vector<harness::SweepSpec> specs;
    for (auto m : {harness::EvalMethod::kSpreeVanilla, harness::EvalMethod::kSpree}) {
      harness::SweepSpec spec;
      spec.method = m;
      spec.strengths = strengths.empty() ? harness::DefaultStrengths(m) : ParseStrengths(strengths);
      spec.k = k;
      spec.seeds = seeds;
      specs.push_back(spec);
    }
    const auto table = harness::Sweep(specs, provider);
    const auto ablation = harness::BuildAblationTable(table, budget);
    harness::WriteAblationCsv((fs::path(out) / "ablation.csv").string(), ablation, stamp(std::nullopt));
    std::cout << harness::FormatAblationTable(ablation);
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return Run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 3;
  }
}
