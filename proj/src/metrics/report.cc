#include "popalign/metrics/report.h"

#include <fstream>

#include "popalign/common/csv.h"
#include "popalign/common/error.h"

namespace popalign::metrics {

void WriteUserMetricsCsv(const std::string& path, const std::vector<UserMetric>& rows,
                         const std::vector<std::string>& preamble) {
  std::vector<std::vector<std::string>> cells;
  cells.reserve(rows.size());
  for (const auto& r : rows) cells.push_back({std::to_string(r.user), r.metric, FormatNumber(r.value)});
  CsvWriter::WriteWithPreamble(path, preamble, {"user", "metric", "value"}, cells);
}

void WriteAggregatesJson(const std::string& path, const std::map<std::string, double>& aggregates,
                         const nlohmann::json& meta) {
  nlohmann::json j;
  j["meta"] = meta;
  j["metrics"] = nlohmann::json::object();
  for (const auto& [k, v] : aggregates) j["metrics"][k] = v;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(2) << "\n";
}

void WriteCalibrationCsv(const std::string& path, const std::vector<CalibrationCurve>& curves,
                         const std::vector<std::string>& preamble) {
  std::vector<std::vector<std::string>> cells;
  for (const auto& c : curves) {
    const std::string user = c.user ? std::to_string(*c.user) : "all";
    for (std::size_t j = 0; j < c.tau.size(); ++j) {
      cells.push_back({user, FormatNumber(c.tau[j]), FormatNumber(c.tau_hat[j])});
    }
  }
  CsvWriter::WriteWithPreamble(path, preamble, {"user", "tau", "tau_hat"}, cells);
}

CalibrationCurve MeanCurve(const std::vector<CalibrationCurve>& curves) {
  if (curves.empty()) throw DataError("no curves to average");
  CalibrationCurve mean;
  mean.tau = curves.front().tau;
  mean.tau_hat.assign(mean.tau.size(), 0.0);
  for (const auto& c : curves) {
    if (c.tau != mean.tau) throw ConfigError("curves use different quantile grids");
    for (std::size_t j = 0; j < c.tau_hat.size(); ++j) mean.tau_hat[j] += c.tau_hat[j];
  }
  for (auto& v : mean.tau_hat) v /= static_cast<double>(curves.size());
  return mean;
}

}  // namespace popalign::metrics
