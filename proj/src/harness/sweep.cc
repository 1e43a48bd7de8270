#include "popalign/harness/sweep.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "popalign/common/csv.h"
#include "popalign/common/error.h"
#include "popalign/metrics/report.h"

namespace popalign::harness {

void SweepSpec::Validate() const {
  if (strengths.empty()) throw ConfigError("sweep strengths are empty");
  if (k < 1) throw ConfigError("sweep K must be >= 1");
  if (seeds.empty()) throw ConfigError("sweep needs at least one seed");
  const auto& known = AllMetricNames();
  for (const auto& m : metrics) {
    if (std::find(known.begin(), known.end(), m) == known.end()) throw ConfigError("unknown metric '" + m + "'");
  }
  for (double s : strengths) {
    if (!std::isfinite(s) || s < 0.0) throw ConfigError("sweep strengths must be finite and >= 0");
    const bool bounded = method == EvalMethod::kIpr || method == EvalMethod::kPp ||
                         method == EvalMethod::kPopSteer;
    if (bounded && s > 1.0) throw ConfigError(EvalMethodName(method) + " strengths must lie in [0, 1]");
  }
}

std::vector<double> DefaultStrengths(EvalMethod method) {
  switch (method) {
    case EvalMethod::kBase: return {0.0};
    case EvalMethod::kSpree:
    case EvalMethod::kSpreeVanilla: return {0, 1, 2, 4, 8, 16, 32};
    default: {
      std::vector<double> a;
      for (int i = 0; i <= 10; ++i) a.push_back(i / 10.0);
      return a;
    }
  }
}

double MaxStrength(EvalMethod method) { return DefaultStrengths(method).back(); }

SweepTable Sweep(const std::vector<SweepSpec>& specs, const ContextProvider& contexts) {
  SweepTable table;
  table.columns = {"ndcg", "hr", "pce", "alrp"};
  for (const auto& spec : specs) {
    spec.Validate();
    for (const auto& m : spec.metrics) {
      if (std::find(table.columns.begin(), table.columns.end(), m) == table.columns.end()) table.columns.push_back(m);
    }
  }
  for (const auto& spec : specs) {
    for (std::uint64_t seed : spec.seeds) CheckPrerequisites(contexts(seed), spec.method);
  }
  for (const auto& spec : specs) {
    const std::string name = EvalMethodName(spec.method);
    for (double strength : spec.strengths) {
      SweepRow mean{name, strength, std::nullopt, {}};
      for (std::uint64_t seed : spec.seeds) {
        const auto result = Evaluate(contexts(seed), spec.method, strength, spec.k, seed);
        SweepRow row{name, strength, seed, {}};
        for (const auto& c : table.columns) {
          row.metrics[c] = result.aggregates.at(c);
          mean.metrics[c] += result.aggregates.at(c) / static_cast<double>(spec.seeds.size());
        }
        table.rows.push_back(std::move(row));
      }
      table.summary.push_back(std::move(mean));
    }
  }
  return table;
}

const SweepRow* FindSummary(const SweepTable& table, const std::string& method, double strength) {
  for (const auto& r : table.summary) {
    if (r.method == method && r.strength == strength) return &r;
  }
  return nullptr;
}

void WriteSweepCsv(const std::string& path, const SweepTable& table, const std::vector<std::string>& preamble) {
  std::vector<std::string> header = {"method", "strength", "seed"};
  header.insert(header.end(), table.columns.begin(), table.columns.end());
  std::vector<std::vector<std::string>> cells;
  const auto emit = [&](const SweepRow& r) {
    std::vector<std::string> row = {r.method, FormatNumber(r.strength), r.seed ? std::to_string(*r.seed) : "mean"};
    for (const auto& c : table.columns) row.push_back(FormatNumber(r.metrics.at(c)));
    cells.push_back(std::move(row));
  };
  for (const auto& r : table.rows) emit(r);
  for (const auto& r : table.summary) emit(r);
  CsvWriter::WriteWithPreamble(path, preamble, header, cells);
}

std::vector<CalibrationEntry> CalibrationReport(const std::vector<std::pair<EvalMethod, double>>& methods, int k,
                                                const std::vector<std::uint64_t>& seeds,
                                                const ContextProvider& contexts) {
  if (seeds.empty()) throw ConfigError("calibration report needs at least one seed");
  std::vector<CalibrationEntry> out;
  for (const auto& [method, strength] : methods) {
    std::vector<metrics::CalibrationCurve> per_seed;
    for (std::uint64_t seed : seeds) {
      const auto result = Evaluate(contexts(seed), method, strength, k, seed);
      std::vector<metrics::CalibrationCurve> curves;
      for (const auto& u : result.users) curves.push_back(u.curve);
      per_seed.push_back(metrics::MeanCurve(curves));
    }
    CalibrationEntry e{EvalMethodName(method), strength, metrics::MeanCurve(per_seed)};
    e.mean_curve.user.reset();
    out.push_back(std::move(e));
  }
  return out;
}

void WriteCalibrationReportCsv(const std::string& path, const std::vector<CalibrationEntry>& entries,
                               const std::vector<std::string>& preamble) {
  std::vector<std::vector<std::string>> cells;
  for (const auto& e : entries) {
    for (std::size_t j = 0; j < e.mean_curve.tau.size(); ++j) {
      cells.push_back({e.method, FormatNumber(e.strength), FormatNumber(e.mean_curve.tau[j]),
                       FormatNumber(e.mean_curve.tau_hat[j])});
    }
  }
  if (!entries.empty()) {
    for (double t : entries.front().mean_curve.tau) cells.push_back({"diagonal", "0", FormatNumber(t), FormatNumber(t)});
  }
  CsvWriter::WriteWithPreamble(path, preamble, {"method", "strength", "tau", "tau_hat"}, cells);
}

double SelectBudgetedStrength(const std::map<double, double>& candidates, double base_ndcg, double budget) {
  if (!(budget >= 0.0)) throw ConfigError("NDCG budget must be >= 0");
  double best = 0.0;
  if (budget == 0.0) return best;
  for (const auto& [strength, ndcg] : candidates) {
    if (ndcg >= (1.0 - budget) * base_ndcg && strength > best) best = strength;
  }
  return best;
}

namespace {

double DeltaPct(double value, double base) { return base != 0.0 ? 100.0 * (value - base) / base : 0.0; }

AblationRow MakeRow(const std::string& method, double strength, const SweepRow& r, const AblationRow& base) {
  AblationRow a;
  a.method = method;
  a.strength = strength;
  a.ndcg = r.metrics.at("ndcg");
  a.pce = r.metrics.at("pce");
  a.alrp = r.metrics.at("alrp");
  a.ndcg_delta_pct = DeltaPct(a.ndcg, base.ndcg);
  a.pce_delta_pct = DeltaPct(a.pce, base.pce);
  a.alrp_delta_pct = DeltaPct(a.alrp, base.alrp);
  return a;
}

}  // namespace

AblationTable BuildAblationTable(const SweepTable& table, double budget) {
  AblationTable out;
  out.budget = budget;
  const SweepRow* base = FindSummary(table, "base", 0.0);
  if (!base) base = FindSummary(table, "spree", 0.0);
  if (!base) base = FindSummary(table, "spree_vanilla", 0.0);
  if (!base) throw ConfigError("ablation needs a base row or a strength-0 steering row");
  AblationRow zero;
  out.base = MakeRow("base", 0.0, *base, zero);
  out.base.ndcg_delta_pct = out.base.pce_delta_pct = out.base.alrp_delta_pct = 0.0;
  for (const std::string method : {"spree_vanilla", "spree"}) {
    std::map<double, double> candidates;
    for (const auto& r : table.summary) {
      if (r.method == method) candidates[r.strength] = r.metrics.at("ndcg");
    }
    if (candidates.empty()) continue;
    const double chosen = SelectBudgetedStrength(candidates, out.base.ndcg, budget);
    const SweepRow* row = FindSummary(table, method, chosen);
    out.rows.push_back(row ? MakeRow(method, chosen, *row, out.base) : MakeRow(method, 0.0, *base, out.base));
  }
  return out;
}

std::string FormatAblationTable(const AblationTable& t) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-14s %8s %18s %18s %18s\n", "method", "lambda", "NDCG@K", "PCE@K", "ALRP@K");
  os << buf;
  const auto cell = [](double v, double pct, bool show) {
    char b[64];
    if (show) {
      std::snprintf(b, sizeof b, "%.3f (%+.0f%%)", v, pct);
    } else {
      std::snprintf(b, sizeof b, "%.3f", v);
    }
    return std::string(b);
  };
  const auto line = [&](const AblationRow& r, bool show) {
    std::snprintf(buf, sizeof buf, "%-14s %8s %18s %18s %18s\n", r.method.c_str(), FormatNumber(r.strength).c_str(),
                  cell(r.ndcg, r.ndcg_delta_pct, show).c_str(), cell(r.pce, r.pce_delta_pct, show).c_str(),
                  cell(r.alrp, r.alrp_delta_pct, show).c_str());
    os << buf;
  };
  line(t.base, false);
  for (const auto& r : t.rows) line(r, true);
  return os.str();
}

void WriteAblationCsv(const std::string& path, const AblationTable& t, const std::vector<std::string>& preamble) {
  std::vector<std::vector<std::string>> cells;
  const auto emit = [&](const AblationRow& r) {
    cells.push_back({r.method, FormatNumber(r.strength), FormatNumber(r.ndcg), FormatNumber(r.ndcg_delta_pct),
                     FormatNumber(r.pce), FormatNumber(r.pce_delta_pct), FormatNumber(r.alrp),
                     FormatNumber(r.alrp_delta_pct)});
  };
  emit(t.base);
  for (const auto& r : t.rows) emit(r);
  CsvWriter::WriteWithPreamble(path, preamble,
                               {"method", "strength", "ndcg", "ndcg_delta_pct", "pce", "pce_delta_pct", "alrp",
                                "alrp_delta_pct"},
                               cells);
}

}  // namespace popalign::harness
