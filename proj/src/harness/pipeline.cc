#include "popalign/harness/pipeline.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "popalign/common/csv.h"
#include "popalign/common/error.h"
#include "popalign/seqrec/checkpoint.h"

namespace popalign::harness {

namespace fs = std::filesystem;

namespace {

char ParseDelimiter(const std::string& text) {
  if (text == "tab" || text == "\\t") return '\t';
  if (text == "comma") return ',';
  if (text == "colon") return ':';
  if (text == "space") return ' ';
  if (text == "semicolon") return ';';
  if (text.size() == 1) return text[0];
  throw ConfigError("data.delimiter must be one character or tab/comma/colon/space/semicolon");
}

template <typename F>
auto RunStage(const std::string& stage, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

void Say(const Logger& log, const std::string& line) {
  if (log) log(line);
}

void WriteText(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

}  // namespace

PipelineConfig PipelineConfig::FromKeyValue(const KeyValueConfig& cfg, bool require_dataset) {
  PipelineConfig p;
  p.raw = cfg;
  p.out_dir = cfg.GetString("out_dir", "runs/default");
  for (auto s : cfg.GetIntList("seeds", {cfg.GetInt("seed", 42)})) {
    if (s < 0) throw ConfigError("seeds must be non-negative");
    p.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  if (p.seeds.empty()) throw ConfigError("seeds is empty");

  if (cfg.Has("data.path")) {
    p.data_path = cfg.RequireString("data.path");
    if (require_dataset && !fs::exists(*p.data_path)) throw ConfigError("dataset path '" + *p.data_path + "' does not exist");
  }
  if (cfg.GetBool("data.synthetic", false)) {
    if (p.data_path) throw ConfigError("set either data.path or data.synthetic, not both");
    p.synthetic = SyntheticWorldSpec::FromKeyValue(cfg);
  }
  if (require_dataset && !p.data_path && !p.synthetic) throw ConfigError("no dataset: set data.path or data.synthetic = true");
  p.columns.delimiter = ParseDelimiter(cfg.GetString("data.delimiter", "tab"));
  p.columns.user_column = static_cast<int>(cfg.GetInt("data.user_column", 0));
  p.columns.item_column = static_cast<int>(cfg.GetInt("data.item_column", 1));
  p.columns.timestamp_column = static_cast<int>(cfg.GetInt("data.timestamp_column", 2));
  p.columns.has_header = cfg.GetBool("data.header", false);
  p.min_interactions = static_cast<int>(cfg.GetInt("data.min_interactions", 0));
  if (p.min_interactions < 0) throw ConfigError("data.min_interactions must be >= 0");
  p.popularity_source = corpus::ParsePopularitySource(cfg.GetString("popularity.source", "train"));

  p.model = seqrec::ModelConfig::FromKeyValue(cfg, 1);
  p.train = seqrec::TrainConfig::FromKeyValue(cfg);
  p.spree = spree::SpreeConfig::FromKeyValue(cfg);
  p.spree.Validate(p.model.max_len);

  p.sae_enabled = cfg.GetBool("sae.enabled", false);
  p.sae.latent_dim = static_cast<int>(cfg.GetInt("sae.latent_dim", p.sae.latent_dim));
  p.sae.k = static_cast<int>(cfg.GetInt("sae.k", p.sae.k));
  p.sae.learning_rate = cfg.GetDouble("sae.learning_rate", p.sae.learning_rate);
  p.sae.max_epochs = static_cast<int>(cfg.GetInt("sae.max_epochs", p.sae.max_epochs));
  p.sae.patience = static_cast<int>(cfg.GetInt("sae.patience", p.sae.patience));
  p.sae.batch_size = static_cast<int>(cfg.GetInt("sae.batch_size", p.sae.batch_size));
  p.sae.train_frac = cfg.GetDouble("sae.train_frac", p.sae.train_frac);
  p.sae_sequences = static_cast<int>(cfg.GetInt("sae.sequences", p.sae_sequences));
  if (p.sae_enabled) p.sae.Validate(p.model.dim);
  if (p.sae_sequences < 2) throw ConfigError("sae.sequences must be >= 2");

  p.eval_k = static_cast<int>(cfg.GetInt("eval.k", p.eval_k));
  if (p.eval_k < 1) throw ConfigError("eval.k must be >= 1");
  p.exclude_seen = cfg.GetBool("eval.exclude_seen", p.exclude_seen);
  p.grid_levels = static_cast<int>(cfg.GetInt("eval.grid_levels", p.grid_levels));
  if (p.grid_levels < 2) throw ConfigError("eval.grid_levels must be >= 2");
  return p;
}

PipelineConfig PipelineConfig::Load(const std::string& path) { return FromKeyValue(KeyValueConfig::Load(path)); }

std::string PipelineConfig::Hash() const {
  KeyValueConfig copy;
  for (const auto& [k, v] : raw.entries()) {
    if (k != "out_dir") copy.Set(k, v);
  }
  return copy.Hash();
}

std::vector<std::string> PipelineConfig::Stamp(std::optional<std::uint64_t> seed) const {
  std::vector<std::string> lines = {"config_hash=" + Hash()};
  if (seed) lines.push_back("seed=" + std::to_string(*seed));
  return lines;
}

std::string SeedDir(const std::string& out_dir, std::uint64_t seed) {
  return (fs::path(out_dir) / ("seed_" + std::to_string(seed))).string();
}

corpus::InteractionLog LoadIngested(const std::string& dir) {
  corpus::ColumnSpec spec;
  spec.has_header = true;
  const auto dense = corpus::LoadInteractions((fs::path(dir) / "data.tsv").string(), spec);
  const auto ids = corpus::ReadIdMap((fs::path(dir) / "id_map.json").string());
  if (ids.users.size() != static_cast<std::size_t>(dense.num_users()) ||
      ids.items.size() != static_cast<std::size_t>(dense.num_items())) {
    throw FormatError(dir + ": id_map.json does not match data.tsv");
  }
  std::vector<std::vector<std::int64_t>> ts;
  for (UserId u = 0; u < dense.num_users(); ++u) ts.push_back(dense.timestamps(u));
  return corpus::InteractionLog::FromParts(dense.sequences(), ts, ids.users, ids.items);
}

corpus::InteractionLog IngestStage(const PipelineConfig& cfg, const Logger& log) {
  return RunStage("ingest", [&] {
    corpus::InteractionLog raw;
    if (cfg.synthetic) {
      raw = MakeSyntheticWorld(*cfg.synthetic).log;
      Say(log, "[ingest] synthetic world: " + std::to_string(raw.num_users()) + " users");
    } else {
      raw = corpus::LoadInteractions(*cfg.data_path, cfg.columns);
      Say(log, "[ingest] loaded " + std::to_string(raw.num_interactions()) + " interactions from " + *cfg.data_path);
    }
    if (cfg.min_interactions > 0) raw = corpus::FilterMinInteractions(raw, cfg.min_interactions);

    fs::create_directories(cfg.out_dir);
    const std::string data = (fs::path(cfg.out_dir) / "data.tsv").string();
    {
      std::vector<std::vector<std::string>> rows;
      for (UserId u = 0; u < raw.num_users(); ++u) {
        const auto& seq = raw.sequence(u);
        const auto& ts = raw.timestamps(u);
        for (std::size_t k = 0; k < seq.size(); ++k) {
          rows.push_back({std::to_string(u) + "\t" + std::to_string(seq[k]) + "\t" + std::to_string(ts[k])});
        }
      }
      std::ofstream out(data, std::ios::trunc);
      if (!out) throw DataError("cannot write " + data);
      out << "user\titem\ttimestamp\n";
      for (const auto& r : rows) out << r[0] << '\n';
    }
    // Reload so that items absent from every sequence drop out of the catalog.
    corpus::ColumnSpec spec;
    spec.has_header = true;
    const auto dense = corpus::LoadInteractions(data, spec);
    std::vector<std::int64_t> users, items;
    for (auto id : dense.user_original_ids()) users.push_back(raw.user_original_ids().at(static_cast<std::size_t>(id)));
    for (auto id : dense.item_original_ids()) items.push_back(raw.item_original_ids().at(static_cast<std::size_t>(id)));
    std::vector<std::vector<std::int64_t>> ts;
    for (UserId u = 0; u < dense.num_users(); ++u) ts.push_back(dense.timestamps(u));
    auto result = corpus::InteractionLog::FromParts(dense.sequences(), ts, users, items);
    corpus::WriteIdMap((fs::path(cfg.out_dir) / "id_map.json").string(), result);

    std::ostringstream echo;
    for (const auto& line : cfg.Stamp(std::nullopt)) echo << "# " << line << "\n";
    echo << cfg.raw.ToString();
    WriteText((fs::path(cfg.out_dir) / "config.txt").string(), echo.str());
    Say(log, "[ingest] " + std::to_string(result.num_users()) + " users, " + std::to_string(result.num_items()) +
                 " items, " + std::to_string(result.num_interactions()) + " interactions");
    return result;
  });
}

SeedArtifacts TrainStage(const PipelineConfig& cfg, const corpus::Split& split, std::uint64_t seed,
                         const Logger& log) {
  return RunStage("train", [&] {
    auto model = cfg.model;
    model.catalog_size = split.train.num_items();
    model.Validate();
    auto tc = cfg.train;
    tc.seed = seed;
    const int report_every = std::max(1, tc.epochs / 10);
    auto result = seqrec::Train(split, model, tc, [&](const seqrec::EpochLog& e) {
      if (e.epoch % report_every == 0 || e.epoch == tc.epochs) {
        Say(log, "[train seed " + std::to_string(seed) + "] epoch " + std::to_string(e.epoch) + " loss " +
                     FormatNumber(e.loss));
      }
    });
    SeedArtifacts a;
    a.seed = seed;
    a.dir = SeedDir(cfg.out_dir, seed);
    fs::create_directories(a.dir);
    std::vector<std::vector<std::string>> rows;
    for (const auto& e : result.log) {
      rows.push_back({std::to_string(e.epoch), FormatNumber(e.loss), FormatNumber(e.valid_ndcg10)});
    }
    CsvWriter::WriteWithPreamble((fs::path(a.dir) / "train_log.csv").string(), cfg.Stamp(seed),
                                 {"epoch", "loss", "valid_ndcg10"}, rows);
    seqrec::SaveCheckpoint(result.params, (fs::path(a.dir) / "checkpoint.bin").string(),
                           {{"config_hash", cfg.Hash()}, {"seed", seed}, {"train", tc.ToJson()}});
    a.params = std::move(result.params);
    return a;
  });
}

void SteerFitStage(const PipelineConfig& cfg, const corpus::Split& split, const std::vector<std::int64_t>& popularity,
                   SeedArtifacts& a, const Logger& log) {
  RunStage("steer-fit", [&] {
    auto sc = cfg.spree;
    sc.seed = a.seed;
    a.steering = spree::FitSpree(a.params, split, popularity, sc);
    const nlohmann::json stamp = {{"config_hash", cfg.Hash()}, {"seed", a.seed}};
    spree::SaveSteeringArtifacts(*a.steering, (fs::path(a.dir) / "steering.bin").string(), stamp);
    spree::WriteProbeGridCsv((fs::path(a.dir) / "probe_grid.csv").string(), a.steering->probe_grid, cfg.Stamp(a.seed));
    Say(log, "[steer-fit seed " + std::to_string(a.seed) + "] site t=" + std::to_string(a.steering->site.position) +
                 " level=" + std::to_string(a.steering->site.level) + " estimator R2=" +
                 FormatNumber(a.steering->diagnostics.value("estimator_heldout_r2", 0.0)));
    if (!cfg.sae_enabled) return 0;

    const int users = split.train.num_users();
    Eigen::MatrixXd h(users, a.params.config.dim);
    for (UserId u = 0; u < users; ++u) {
      const auto seq = seqrec::PadSequence(split.train.sequence(u), a.params.config.max_len);
      h.row(u) = seqrec::Forward(a.params, seq).user_embedding.cast<double>();
    }
    auto sae_cfg = cfg.sae;
    sae_cfg.seed = a.seed;
    auto trained = baselines::TrainSae(h, sae_cfg);
    const auto sets = spree::BuildContrastiveSets(popularity, cfg.sae_sequences, a.params.config.max_len,
                                                  sc.head_frac, sc.tail_frac, sc.pad_prefix, a.seed + 7);
    const auto embed = [&](const std::vector<ItemSequence>& seqs) {
      Eigen::MatrixXd m(static_cast<Eigen::Index>(seqs.size()), a.params.config.dim);
      for (std::size_t k = 0; k < seqs.size(); ++k) {
        m.row(static_cast<Eigen::Index>(k)) = seqrec::Forward(a.params, seqs[k]).user_embedding.cast<double>();
      }
      return m;
    };
    a.latent_scores = baselines::LatentPopularityScores(trained.sae, embed(sets.d_plus), embed(sets.d_minus));
    a.sae = trained.sae;
    int flagged = 0;
    for (double s : a.latent_scores) flagged += s > baselines::kLatentSignificance ? 1 : 0;
    nlohmann::json meta = stamp;
    meta["train_mse"] = trained.train_mse;
    meta["valid_mse"] = trained.valid_mse;
    meta["epochs_run"] = trained.epochs_run;
    meta["flagged_latents"] = flagged;
    meta["latent_selection"] = "point-biserial correlation with popular-set membership (reconstructed)";
    baselines::SaveSae(*a.sae, a.latent_scores, (fs::path(a.dir) / "sae.bin").string(), meta);
    Say(log, "[steer-fit seed " + std::to_string(a.seed) + "] SAE valid MSE " + FormatNumber(trained.valid_mse) +
                 ", flagged latents " + std::to_string(flagged));
    return 0;
  });
}

Artifacts RunPipeline(const PipelineConfig& cfg, const Logger& log) {
  Artifacts art;
  art.dir = cfg.out_dir;
  art.config = cfg;
  art.log = IngestStage(cfg, log);
  art.split = RunStage("split", [&] { return corpus::LeaveOneOutSplit(art.log); });
  art.popularity = RunStage("popularity", [&] {
    return corpus::ComputePopularity(art.log, art.split, cfg.popularity_source).s;
  });
  nlohmann::json manifest = {{"config_hash", cfg.Hash()},
                             {"users", art.log.num_users()},
                             {"items", art.log.num_items()},
                             {"interactions", art.log.num_interactions()},
                             {"seeds", nlohmann::json::array()}};
  for (std::uint64_t seed : cfg.seeds) {
    auto a = TrainStage(cfg, art.split, seed, log);
    SteerFitStage(cfg, art.split, art.popularity, a, log);
    nlohmann::json entry = {{"seed", seed}, {"dir", fs::path(a.dir).filename().string()}};
    if (a.steering) entry["steering"] = a.steering->diagnostics;
    manifest["seeds"].push_back(entry);
    art.seeds.push_back(std::move(a));
  }
  WriteText((fs::path(cfg.out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");
  return art;
}

const SeedArtifacts& Artifacts::ForSeed(std::uint64_t seed) const {
  for (const auto& s : seeds) {
    if (s.seed == seed) return s;
  }
  throw ConfigError("no artifacts for seed " + std::to_string(seed) + " in " + dir);
}

EvalContext Artifacts::Context(std::uint64_t seed) const {
  const auto& s = ForSeed(seed);
  EvalContext ctx;
  ctx.params = &s.params;
  ctx.split = &split;
  ctx.popularity = popularity;
  ctx.grid = metrics::QuantileGrid::Uniform(config.grid_levels);
  ctx.steering = s.steering ? &*s.steering : nullptr;
  ctx.sae = s.sae ? &*s.sae : nullptr;
  ctx.latent_scores = s.sae ? &s.latent_scores : nullptr;
  ctx.exclude_seen = config.exclude_seen;
  return ctx;
}

Artifacts LoadArtifacts(const std::string& dir, bool require_steering) {
  Artifacts art;
  art.dir = dir;
  const auto cfg_path = fs::path(dir) / "config.txt";
  if (!fs::exists(cfg_path)) throw ConfigError(dir + " has no config.txt; run ingest first");
  auto raw = KeyValueConfig::Load(cfg_path.string());
  raw.Set("out_dir", dir);
  art.config = PipelineConfig::FromKeyValue(raw, false);
  art.log = LoadIngested(dir);
  art.split = corpus::LeaveOneOutSplit(art.log);
  art.popularity = corpus::ComputePopularity(art.log, art.split, art.config.popularity_source).s;
  for (std::uint64_t seed : art.config.seeds) {
    SeedArtifacts s;
    s.seed = seed;
    s.dir = SeedDir(dir, seed);
    const auto ckpt = fs::path(s.dir) / "checkpoint.bin";
    if (!fs::exists(ckpt)) continue;
    s.params = seqrec::LoadCheckpoint(ckpt.string());
    const auto steer = fs::path(s.dir) / "steering.bin";
    if (fs::exists(steer)) {
      s.steering = spree::LoadSteeringArtifacts(steer.string());
    } else if (require_steering) {
      throw ConfigError("missing steering artifacts " + steer.string() + "; run steer-fit first");
    }
    const auto sae = fs::path(s.dir) / "sae.bin";
    if (fs::exists(sae)) s.sae = baselines::LoadSae(sae.string(), &s.latent_scores);
    if (s.params.config.catalog_size != art.log.num_items()) {
      throw FormatError(ckpt.string() + ": catalog size does not match the ingested data");
    }
    art.seeds.push_back(std::move(s));
  }
  return art;
}

void WriteRecListsCsv(const std::string& path, const corpus::InteractionLog& log, const EvalResult& result,
                      const std::vector<std::string>& preamble) {
  std::vector<std::vector<std::string>> rows;
  const std::string method = EvalMethodName(result.method);
  const std::string strength = FormatNumber(result.strength);
  for (const auto& u : result.users) {
    for (std::size_t r = 0; r < u.recs.items.size(); ++r) {
      rows.push_back({std::to_string(log.user_original_ids().at(static_cast<std::size_t>(u.user))),
                      std::to_string(r + 1),
                      std::to_string(log.item_original_ids().at(static_cast<std::size_t>(u.recs.items[r]))),
                      FormatNumber(u.recs.scores[r]), method, strength});
    }
  }
  CsvWriter::WriteWithPreamble(path, preamble, {"user", "rank", "item", "score", "method", "strength"}, rows);
}

}  // namespace popalign::harness
