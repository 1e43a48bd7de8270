#pragma once

#include <functional>
#include <span>
#include <string>

#include "popalign/seqrec/model.h"

namespace popalign::seqrec {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::int64_t worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  std::int64_t checked = 0;
};

// |a - n| / max(|a|, |n|, floor); exactly 0 when both are 0.
double RelativeError(double analytic, double numeric, double floor = 1e-6);

// Central differences of `loss` w.r.t. every entry of `params`, compared
// against `analytic`.
GradCheckResult FiniteDifferenceCheck(std::span<double> params, std::span<const double> analytic,
                                      const std::function<double()>& loss, double epsilon);

// Checks LossAndGradient on a fixed batch (negatives already sampled,
// dropout off) against central differences for every parameter tensor.
GradCheckResult GradCheck(const ModelParams<double>& params, std::span<const TrainingExample> batch,
                          double epsilon = 1e-5);

}  // namespace popalign::seqrec
