#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "popalign/common/kv_config.h"
#include "popalign/harness/evaluate.h"
#include "popalign/metrics/popularity_dist.h"

namespace popalign::harness {

struct SweepSpec {
  EvalMethod method = EvalMethod::kSpree;
  std::vector<double> strengths;
  int k = 100;
  std::vector<std::uint64_t> seeds;
  // Extra columns beyond ndcg, hr, pce, alrp.
  std::vector<std::string> metrics;

  void Validate() const;
};

// Default strength grids: {0, 1, 2, 4, 8, 16, 32} for spree and
// spree_vanilla, {0, 0.1, ..., 1} for the baselines, {0} for base.
std::vector<double> DefaultStrengths(EvalMethod method);

// The largest value of the method's default grid.
double MaxStrength(EvalMethod method);

struct SweepRow {
  std::string method;
  double strength = 0.0;
  std::optional<std::uint64_t> seed;  // empty on seed-averaged rows
  std::map<std::string, double> metrics;
};

struct SweepTable {
  std::vector<std::string> columns;  // metric columns in output order
  std::vector<SweepRow> rows;        // one per (method, strength, seed)
  std::vector<SweepRow> summary;     // seed means per (method, strength)
};

// Evaluation context for a model seed.
using ContextProvider = std::function<const EvalContext&(std::uint64_t seed)>;

SweepTable Sweep(const std::vector<SweepSpec>& specs, const ContextProvider& contexts);

// Seed-averaged row of a method at a strength, if present.
const SweepRow* FindSummary(const SweepTable& table, const std::string& method, double strength);

void WriteSweepCsv(const std::string& path, const SweepTable& table, const std::vector<std::string>& preamble = {});

// ---------------------------------------------------------------------------

struct CalibrationEntry {
  std::string method;
  double strength = 0.0;
  metrics::CalibrationCurve mean_curve;  // averaged over users, then seeds
};

std::vector<CalibrationEntry> CalibrationReport(const std::vector<std::pair<EvalMethod, double>>& methods, int k,
                                                const std::vector<std::uint64_t>& seeds,
                                                const ContextProvider& contexts);

// method,strength,tau,tau_hat with a closing "diagonal" reference block.
void WriteCalibrationReportCsv(const std::string& path, const std::vector<CalibrationEntry>& entries,
                               const std::vector<std::string>& preamble = {});

// ---------------------------------------------------------------------------

struct AblationRow {
  std::string method;
  double strength = 0.0;
  double ndcg = 0.0, pce = 0.0, alrp = 0.0;
  double ndcg_delta_pct = 0.0, pce_delta_pct = 0.0, alrp_delta_pct = 0.0;
};

struct AblationTable {
  double budget = 0.1;
  AblationRow base;
  std::vector<AblationRow> rows;
};

// Largest strength whose seed-mean NDCG is at least (1 - budget) times the
// base NDCG. Strength 0 is always admissible; a zero budget admits nothing
// else. `candidates` maps strength to NDCG.
double SelectBudgetedStrength(const std::map<double, double>& candidates, double base_ndcg, double budget);

// Rows for spree and spree_vanilla (whichever are present in the summary).
// The base row comes from a "base" sweep when present, otherwise from the
// strength-0 row of either steering method.
AblationTable BuildAblationTable(const SweepTable& table, double budget);

// Plain-text rendering, e.g. "0.176 (-16%)".
std::string FormatAblationTable(const AblationTable& table);
void WriteAblationCsv(const std::string& path, const AblationTable& table,
                      const std::vector<std::string>& preamble = {});

}  // namespace popalign::harness
