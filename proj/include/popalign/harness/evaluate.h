#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "popalign/baselines/baselines.h"
#include "popalign/corpus/corpus.h"
#include "popalign/metrics/popularity_dist.h"
#include "popalign/seqrec/eval.h"
#include "popalign/seqrec/model.h"
#include "popalign/spree/spree.h"

namespace popalign::harness {

enum class EvalMethod { kBase, kSpree, kSpreeVanilla, kIpr, kPp, kRandomNeighbors, kPopSteer };

EvalMethod ParseEvalMethod(const std::string& name);
std::string EvalMethodName(EvalMethod m);

// Frozen inputs shared by every evaluation. Optional artifacts are required
// only by the methods that use them.
struct EvalContext {
  const seqrec::ModelParams<float>* params = nullptr;
  const corpus::Split* split = nullptr;
  std::vector<std::int64_t> popularity;
  metrics::QuantileGrid grid = metrics::QuantileGrid::Default();
  std::optional<metrics::UpdBins> upd_bins;  // default: 20th/80th percentiles of popularity
  const spree::SteeringArtifacts* steering = nullptr;
  const baselines::SparseAutoencoder* sae = nullptr;
  const std::vector<double>* latent_scores = nullptr;
  bool exclude_seen = true;
};

enum class Phase { kValidation, kTest };

// Context items for a user: the train sequence (validation) or train plus
// the validation item (test).
ItemSequence ContextFor(const corpus::Split& split, UserId user, Phase phase);

// Top-K of one user under a method. `seed` drives random neighbors only.
seqrec::RecList RecommendFor(const EvalContext& ctx, EvalMethod method, double strength, int k, UserId user,
                             std::uint64_t seed, Phase phase = Phase::kTest);

// Throws ConfigError when a method's artifacts are missing from the context.
void CheckPrerequisites(const EvalContext& ctx, EvalMethod method);

struct UserEval {
  UserId user = 0;
  seqrec::RecList recs;
  std::map<std::string, double> metrics;  // ndcg, hr, pce, alrp, arp, upd, pl, lpd, bias
  metrics::CalibrationCurve curve;
};

struct EvalResult {
  EvalMethod method = EvalMethod::kBase;
  double strength = 0.0;
  int k = 100;
  std::uint64_t seed = 0;
  // Means of the per-user metrics plus gini, coverage, entropy, hhi over
  // s_hat, and mean_abs_bias.
  std::map<std::string, double> aggregates;
  std::vector<UserEval> users;
  std::size_t log_clamped = 0;
};

EvalResult Evaluate(const EvalContext& ctx, EvalMethod method, double strength, int k, std::uint64_t seed,
                    Phase phase = Phase::kTest);

// Every metric name an EvalResult aggregate may carry.
const std::vector<std::string>& AllMetricNames();

}  // namespace popalign::harness
