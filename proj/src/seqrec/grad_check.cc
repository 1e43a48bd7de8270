#include "popalign/seqrec/grad_check.h"

#include <algorithm>
#include <cmath>

#include "popalign/common/error.h"

namespace popalign::seqrec {

double RelativeError(double analytic, double numeric, double floor) {
  if (analytic == 0.0 && numeric == 0.0) return 0.0;
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult FiniteDifferenceCheck(std::span<double> params, std::span<const double> analytic,
                                      const std::function<double()>& loss, double epsilon) {
  if (params.size() != analytic.size()) {
    throw ConfigError("gradient and parameter sizes differ");
  }
  GradCheckResult result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + epsilon;
    const double up = loss();
    params[i] = saved - epsilon;
    const double down = loss();
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double err = RelativeError(analytic[i], numeric);
    ++result.checked;
    if (err > result.max_relative_error || result.worst_index < 0) {
      result.max_relative_error = std::max(result.max_relative_error, err);
      result.worst_index = static_cast<std::int64_t>(i);
      result.analytic = analytic[i];
      result.numeric = numeric;
    }
  }
  return result;
}

GradCheckResult GradCheck(const ModelParams<double>& params, std::span<const TrainingExample> batch,
                          double epsilon) {
  ModelParams<double> work = params;
  ModelParams<double> grad = ModelParams<double>::Zeros(params.config);
  grad.SetZero();
  LossAndGradient<double>(work, batch, &grad, nullptr);

  std::vector<std::pair<std::string, Matrix<double>*>> tensors;
  std::vector<const Matrix<double>*> grads;
  work.ForEachTensor([&](const std::string& name, Matrix<double>& m) { tensors.emplace_back(name, &m); });
  grad.ForEachTensor([&](const std::string&, const Matrix<double>& m) { grads.push_back(&m); });

  const auto loss = [&work, batch]() { return LossAndGradient<double>(work, batch, nullptr, nullptr); };
  GradCheckResult total;
  total.worst_index = -1;
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    Matrix<double>& m = *tensors[k].second;
    std::span<double> p(m.data(), static_cast<std::size_t>(m.size()));
    std::span<const double> a(grads[k]->data(), static_cast<std::size_t>(grads[k]->size()));
    const auto r = FiniteDifferenceCheck(p, a, loss, epsilon);
    total.checked += r.checked;
    if (r.worst_index >= 0 && (total.worst_index < 0 || r.max_relative_error > total.max_relative_error)) {
      total.max_relative_error = r.max_relative_error;
      total.worst_tensor = tensors[k].first;
      total.worst_index = r.worst_index;
      total.analytic = r.analytic;
      total.numeric = r.numeric;
    }
  }
  return total;
}

}  // namespace popalign::seqrec
