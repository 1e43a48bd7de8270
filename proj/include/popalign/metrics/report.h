#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "popalign/common/types.h"
#include "popalign/metrics/popularity_dist.h"

namespace popalign::metrics {

struct UserMetric {
  UserId user = 0;
  std::string metric;
  double value = 0.0;
};

// Long format: user,metric,value.
void WriteUserMetricsCsv(const std::string& path, const std::vector<UserMetric>& rows,
                         const std::vector<std::string>& preamble = {});

// {"meta": ..., "metrics": {name: value}}
void WriteAggregatesJson(const std::string& path, const std::map<std::string, double>& aggregates,
                         const nlohmann::json& meta = nlohmann::json::object());

// user,tau,tau_hat per curve point; curves without a user id get "all".
void WriteCalibrationCsv(const std::string& path, const std::vector<CalibrationCurve>& curves,
                         const std::vector<std::string>& preamble = {});

// Pointwise mean over curves sharing the same grid.
CalibrationCurve MeanCurve(const std::vector<CalibrationCurve>& curves);

}  // namespace popalign::metrics
