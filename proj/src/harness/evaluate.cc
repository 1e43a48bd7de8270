#include "popalign/harness/evaluate.h"

#include <algorithm>
#include <cmath>

#include "popalign/common/error.h"
#include "popalign/metrics/metrics.h"

namespace popalign::harness {

EvalMethod ParseEvalMethod(const std::string& name) {
  if (name == "base") return EvalMethod::kBase;
  if (name == "spree") return EvalMethod::kSpree;
  if (name == "spree_vanilla") return EvalMethod::kSpreeVanilla;
  if (name == "ipr") return EvalMethod::kIpr;
  if (name == "pp") return EvalMethod::kPp;
  if (name == "random_neighbors") return EvalMethod::kRandomNeighbors;
  if (name == "popsteer") return EvalMethod::kPopSteer;
  throw ConfigError("unknown method '" + name + "'");
}

std::string EvalMethodName(EvalMethod m) {
  switch (m) {
    case EvalMethod::kBase: return "base";
    case EvalMethod::kSpree: return "spree";
    case EvalMethod::kSpreeVanilla: return "spree_vanilla";
    case EvalMethod::kIpr: return "ipr";
    case EvalMethod::kPp: return "pp";
    case EvalMethod::kRandomNeighbors: return "random_neighbors";
    case EvalMethod::kPopSteer: return "popsteer";
  }
  return "unknown";
}

const std::vector<std::string>& AllMetricNames() {
  static const std::vector<std::string> names = {
      "ndcg", "hr",  "pce", "alrp",     "arp", "upd",          "pl",  "lpd", "bias", "mean_abs_bias",
      "gini", "coverage", "entropy", "hhi"};
  return names;
}

ItemSequence ContextFor(const corpus::Split& split, UserId user, Phase phase) {
  ItemSequence ctx = split.train.sequence(user);
  if (phase == Phase::kTest) ctx.push_back(split.valid.at(static_cast<std::size_t>(user)));
  return ctx;
}

void CheckPrerequisites(const EvalContext& ctx, EvalMethod method) {
  if (!ctx.params || !ctx.split) throw ConfigError("evaluation needs model parameters and a split");
  if (ctx.popularity.size() != static_cast<std::size_t>(ctx.params->config.catalog_size)) {
    throw ConfigError("popularity table does not match the model catalog");
  }
  if ((method == EvalMethod::kSpree || method == EvalMethod::kSpreeVanilla) && !ctx.steering) {
    throw ConfigError(EvalMethodName(method) + " needs steering artifacts");
  }
  if (method == EvalMethod::kPopSteer && (!ctx.sae || !ctx.latent_scores)) {
    throw ConfigError("popsteer needs a trained SAE with latent scores");
  }
}

seqrec::RecList RecommendFor(const EvalContext& ctx, EvalMethod method, double strength, int k, UserId user,
                             std::uint64_t seed, Phase phase) {
  const auto& params = *ctx.params;
  const ItemSequence context = ContextFor(*ctx.split, user, phase);
  const auto seq = seqrec::PadSequence(context, params.config.max_len);
  const std::vector<char> excluded =
      ctx.exclude_seen ? seqrec::ExclusionMask(params.config.catalog_size, context) : std::vector<char>{};

  std::optional<seqrec::Intervention<float>> iv;
  if (method == EvalMethod::kSpree) iv = spree::SteerAdaptive(*ctx.steering, strength);
  if (method == EvalMethod::kSpreeVanilla) iv = spree::SteerVanilla(*ctx.steering, strength);
  const auto fwd = seqrec::Forward(params, seq, false, iv ? &*iv : nullptr);

  seqrec::RowVector<float> h = fwd.user_embedding;
  if (method == EvalMethod::kPopSteer) {
    h = baselines::PopSteerApply(h.cast<double>(), *ctx.sae, *ctx.latent_scores, strength).cast<float>();
  }
  const seqrec::RowVector<float> logits = seqrec::ScoreItems(h, params);
  std::vector<double> scores(logits.data(), logits.data() + logits.size());

  switch (method) {
    case EvalMethod::kIpr:
      scores = baselines::IprRescale(scores, ctx.popularity, strength);
      break;
    case EvalMethod::kPp:
      scores = baselines::PpInterpolate(scores, ctx.split->train.sequence(user), strength);
      break;
    case EvalMethod::kRandomNeighbors:
      return baselines::RandomNeighbors(scores, k, strength, seed * 1000003ULL + static_cast<std::uint64_t>(user),
                                        excluded);
    default:
      break;
  }
  return seqrec::TopK(scores, k, excluded);
}

EvalResult Evaluate(const EvalContext& ctx, EvalMethod method, double strength, int k, std::uint64_t seed,
                    Phase phase) {
  CheckPrerequisites(ctx, method);
  const auto& split = *ctx.split;
  const metrics::UpdBins bins = ctx.upd_bins ? *ctx.upd_bins : metrics::DefaultUpdBins(ctx.popularity);
  EvalResult result;
  result.method = method;
  result.strength = strength;
  result.k = k;
  result.seed = seed;

  std::vector<std::int64_t> s_hat(ctx.popularity.size(), 0);
  std::vector<double> pce;
  std::map<std::string, double> sums;
  double abs_bias = 0.0;
  for (UserId u = 0; u < split.train.num_users(); ++u) {
    UserEval ue;
    ue.user = u;
    ue.recs = RecommendFor(ctx, method, strength, k, u, seed, phase);
    for (ItemId i : ue.recs.items) ++s_hat[static_cast<std::size_t>(i)];
    const ItemId target = phase == Phase::kTest ? split.test.at(static_cast<std::size_t>(u))
                                                : split.valid.at(static_cast<std::size_t>(u));
    const auto hist = metrics::PopularityDist::FromItems(split.train.sequence(u), ctx.popularity);
    const auto recs = metrics::PopularityDist::FromItems(ue.recs.items, ctx.popularity);
    ue.curve = metrics::ComputeCalibrationCurve(hist, recs, ctx.grid);
    ue.curve.user = u;
    ue.metrics["ndcg"] = seqrec::NdcgAtK(ue.recs, target, k);
    ue.metrics["hr"] = seqrec::HitRateAtK(ue.recs, target, k);
    ue.metrics["pce"] = metrics::PceFromCurve(ue.curve);
    ue.metrics["alrp"] = metrics::Alrp(recs, &result.log_clamped);
    ue.metrics["arp"] = metrics::Arp(recs);
    ue.metrics["upd"] = metrics::Upd(hist, recs, bins);
    ue.metrics["pl"] = metrics::PopLift(hist, recs);
    ue.metrics["lpd"] = metrics::LogPopDiff(hist, recs, &result.log_clamped);
    ue.metrics["bias"] = metrics::MedianBias(hist, recs);
    for (const auto& [name, value] : ue.metrics) sums[name] += value;
    pce.push_back(ue.metrics["pce"]);
    abs_bias += std::abs(ue.metrics["bias"]);
    result.users.push_back(std::move(ue));
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, result.users.size()));
  for (const auto& [name, value] : sums) result.aggregates[name] = value / n;
  result.aggregates["pce"] = metrics::PceGlobal(pce);
  result.aggregates["mean_abs_bias"] = abs_bias / n;
  std::int64_t covered = 0;
  for (auto c : s_hat) covered += c > 0 ? 1 : 0;
  result.aggregates["coverage"] = metrics::Coverage(covered, static_cast<std::int64_t>(s_hat.size()));
  result.aggregates["gini"] = metrics::Gini(s_hat);
  result.aggregates["entropy"] = metrics::ShannonEntropy(s_hat);
  result.aggregates["hhi"] = metrics::Hhi(s_hat);
  return result;
}

}  // namespace popalign::harness
