#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "popalign/baselines/baselines.h"
#include "popalign/common/kv_config.h"
#include "popalign/corpus/corpus.h"
#include "popalign/harness/evaluate.h"
#include "popalign/harness/synthetic.h"
#include "popalign/seqrec/model.h"
#include "popalign/seqrec/train.h"
#include "popalign/spree/spree.h"

namespace popalign::harness {

using Logger = std::function<void(const std::string&)>;

// Every setting of a run, parsed and validated from key = value text.
struct PipelineConfig {
  KeyValueConfig raw;
  std::string out_dir;
  std::vector<std::uint64_t> seeds;

  std::optional<std::string> data_path;
  std::optional<SyntheticWorldSpec> synthetic;
  corpus::ColumnSpec columns;
  int min_interactions = 0;
  corpus::PopularitySource popularity_source = corpus::PopularitySource::kTrain;

  seqrec::ModelConfig model;  // catalog_size filled from the data
  seqrec::TrainConfig train;
  spree::SpreeConfig spree;
  bool sae_enabled = false;
  baselines::SaeConfig sae;
  int sae_sequences = 1000;  // contrastive sequences per set for latent scoring

  int eval_k = 100;
  bool exclude_seen = true;
  int grid_levels = 11;

  // Throws ConfigError for missing or invalid settings, before any compute.
  // `require_dataset` false skips the dataset checks (for reloading a run
  // whose data has already been ingested).
  static PipelineConfig FromKeyValue(const KeyValueConfig& cfg, bool require_dataset = true);
  static PipelineConfig Load(const std::string& path);

  // FNV-1a of the canonical config without out_dir.
  std::string Hash() const;
  // "config_hash=..." and "seed=..." preamble lines.
  std::vector<std::string> Stamp(std::optional<std::uint64_t> seed) const;
};

struct SeedArtifacts {
  std::uint64_t seed = 0;
  std::string dir;
  seqrec::ModelParams<float> params;
  std::optional<spree::SteeringArtifacts> steering;
  std::optional<baselines::SparseAutoencoder> sae;
  std::vector<double> latent_scores;
};

struct Artifacts {
  std::string dir;
  PipelineConfig config;
  corpus::InteractionLog log;
  corpus::Split split;
  std::vector<std::int64_t> popularity;
  std::vector<SeedArtifacts> seeds;

  const SeedArtifacts& ForSeed(std::uint64_t seed) const;
  EvalContext Context(std::uint64_t seed) const;
};

// Stages. Each wraps failures in StageError naming the stage.
corpus::InteractionLog IngestStage(const PipelineConfig& cfg, const Logger& log = {});
SeedArtifacts TrainStage(const PipelineConfig& cfg, const corpus::Split& split, std::uint64_t seed,
                         const Logger& log = {});
void SteerFitStage(const PipelineConfig& cfg, const corpus::Split& split, const std::vector<std::int64_t>& popularity,
                   SeedArtifacts& seed, const Logger& log = {});

// ingest -> split -> train -> steer-fit for every seed; writes
//   <out>/config.txt, data.tsv, id_map.json, manifest.json
//   <out>/seed_<s>/checkpoint.bin, steering.bin, sae.bin, train_log.csv, probe_grid.csv
Artifacts RunPipeline(const PipelineConfig& cfg, const Logger& log = {});

// Data file written by ingest, reloaded with the same dense ids.
corpus::InteractionLog LoadIngested(const std::string& dir);

// Reads a directory written by RunPipeline (or by the individual stages).
Artifacts LoadArtifacts(const std::string& dir, bool require_steering = false);

std::string SeedDir(const std::string& out_dir, std::uint64_t seed);

// CSV of top-K lists: user,rank,item,score,method,strength (original ids).
void WriteRecListsCsv(const std::string& path, const corpus::InteractionLog& log, const EvalResult& result,
                      const std::vector<std::string>& preamble = {});

}  // namespace popalign::harness
