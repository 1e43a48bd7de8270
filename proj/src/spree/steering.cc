#include <cmath>

#include "popalign/common/container.h"
#include "popalign/common/error.h"
#include "popalign/metrics/metrics.h"
#include "popalign/seqrec/eval.h"
#include "popalign/spree/spree.h"

namespace popalign::spree {

seqrec::Intervention<float> SteerVanilla(const SteeringArtifacts& artifacts, double lambda) {
  seqrec::Intervention<float> iv;
  iv.level = artifacts.site.level;
  iv.position = artifacts.site.position;
  const Eigen::RowVectorXf shift = (artifacts.v * lambda).cast<float>();
  iv.apply = [shift](seqrec::RowVector<float>& x) { x += shift; };
  return iv;
}

seqrec::Intervention<float> SteerAdaptive(const SteeringArtifacts& artifacts, double lambda,
                                          double* last_scale) {
  seqrec::Intervention<float> iv;
  iv.level = artifacts.site.level;
  iv.position = artifacts.site.position;
  const Eigen::RowVectorXd v = artifacts.v;
  const BiasEstimator est = artifacts.estimator;
  iv.apply = [v, est, lambda, last_scale](seqrec::RowVector<float>& x) {
    const double scale = lambda * est.Predict(x.cast<double>());
    if (last_scale) *last_scale = scale;
    x += (v * scale).cast<float>();
  };
  return iv;
}

namespace {

NamedTensor RowTensor(const std::string& name, const Eigen::RowVectorXd& v) {
  NamedTensor t;
  t.name = name;
  t.rows = 1;
  t.cols = v.size();
  for (Eigen::Index i = 0; i < v.size(); ++i) t.data.push_back(static_cast<float>(v(i)));
  return t;
}

Eigen::RowVectorXd FromTensor(const NamedTensor& t) {
  Eigen::RowVectorXd v(static_cast<Eigen::Index>(t.data.size()));
  for (std::size_t i = 0; i < t.data.size(); ++i) v(static_cast<Eigen::Index>(i)) = t.data[i];
  return v;
}

}  // namespace

void SaveSteeringArtifacts(const SteeringArtifacts& a, const std::string& path, const nlohmann::json& meta) {
  Container c;
  c.kind = "steering";
  c.meta = meta.is_object() ? meta : nlohmann::json::object();
  c.meta["site"] = {{"position", a.site.position}, {"level", a.site.level}};
  c.meta["intercept"] = a.estimator.intercept;
  c.meta["l1_penalty"] = a.estimator.l1_penalty;
  c.meta["diagnostics"] = a.diagnostics;
  c.tensors.push_back(RowTensor("v", a.v));
  const Eigen::VectorXd w = a.estimator.weights.size() ? a.estimator.weights : Eigen::VectorXd::Zero(a.v.size());
  c.tensors.push_back(RowTensor("estimator_weights", w.transpose()));
  NamedTensor grid;
  grid.name = "probe_grid";
  grid.rows = static_cast<std::int64_t>(a.probe_grid.cells.size());
  grid.cols = 3;
  for (const auto& cell : a.probe_grid.cells) {
    grid.data.push_back(static_cast<float>(cell.position));
    grid.data.push_back(static_cast<float>(cell.level));
    grid.data.push_back(static_cast<float>(cell.accuracy));
  }
  c.tensors.push_back(std::move(grid));
  WriteContainer(path, c);
}

SteeringArtifacts LoadSteeringArtifacts(const std::string& path, nlohmann::json* meta) {
  const Container c = ReadContainer(path);
  if (c.kind != "steering") throw FormatError(path + ": expected steering artifacts, found '" + c.kind + "'");
  SteeringArtifacts a;
  try {
    a.site.position = c.meta.at("site").at("position").get<int>();
    a.site.level = c.meta.at("site").at("level").get<int>();
    a.estimator.intercept = c.meta.at("intercept").get<double>();
    a.estimator.l1_penalty = c.meta.at("l1_penalty").get<double>();
    a.diagnostics = c.meta.value("diagnostics", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad steering header: " + e.what());
  }
  for (const char* name : {"v", "estimator_weights", "probe_grid"}) {
    if (!c.Contains(name)) throw FormatError(path + ": missing tensor " + name);
  }
  a.v = FromTensor(c.Get("v"));
  a.estimator.weights = FromTensor(c.Get("estimator_weights")).transpose();
  if (a.estimator.weights.size() != a.v.size()) throw FormatError(path + ": estimator and v differ in size");
  const auto& grid = c.Get("probe_grid");
  if (grid.cols != 3) throw FormatError(path + ": probe grid must have 3 columns");
  for (std::int64_t r = 0; r < grid.rows; ++r) {
    const float* row = grid.data.data() + r * 3;
    a.probe_grid.cells.push_back({static_cast<int>(row[0]), static_cast<int>(row[1]), row[2]});
  }
  if (meta) *meta = c.meta;
  return a;
}

void SpreeConfig::Validate(int max_len) const {
  if (num_sequences < 2) throw ConfigError("spree.num_sequences must be >= 2");
  if (pad_prefix < 0 || pad_prefix >= max_len) throw ConfigError("spree.pad_prefix must lie in [0, T)");
  if (estimator_k < 1) throw ConfigError("spree.estimator_k must be >= 1");
  if (folds < 2) throw ConfigError("spree.folds must be >= 2");
  if (l1_grid.empty()) throw ConfigError("spree.l1_grid is empty");
  for (int t : probe_positions) {
    if (t < pad_prefix || t >= max_len) throw ConfigError("spree.probe_positions must be non-pad positions");
  }
}

nlohmann::json SpreeConfig::ToJson() const {
  return {{"num_sequences", num_sequences}, {"head_frac", head_frac},     {"tail_frac", tail_frac},
          {"pad_prefix", pad_prefix},       {"probe_holdout", probe_holdout}, {"probe_positions", probe_positions},
          {"estimator_k", estimator_k},     {"folds", folds},             {"l1_grid", l1_grid},
          {"estimator_holdout", estimator_holdout}, {"seed", seed}};
}

SpreeConfig SpreeConfig::FromKeyValue(const KeyValueConfig& cfg) {
  SpreeConfig s;
  s.num_sequences = static_cast<int>(cfg.GetInt("spree.num_sequences", s.num_sequences));
  s.head_frac = cfg.GetDouble("spree.head_frac", s.head_frac);
  s.tail_frac = cfg.GetDouble("spree.tail_frac", s.tail_frac);
  s.pad_prefix = static_cast<int>(cfg.GetInt("spree.pad_prefix", s.pad_prefix));
  s.probe_holdout = cfg.GetDouble("spree.probe_holdout", s.probe_holdout);
  for (auto t : cfg.GetIntList("spree.probe_positions", {})) s.probe_positions.push_back(static_cast<int>(t));
  s.estimator_k = static_cast<int>(cfg.GetInt("spree.estimator_k", s.estimator_k));
  s.folds = static_cast<int>(cfg.GetInt("spree.folds", s.folds));
  s.l1_grid = cfg.GetDoubleList("spree.l1_grid", s.l1_grid);
  s.estimator_holdout = cfg.GetDouble("spree.estimator_holdout", s.estimator_holdout);
  s.seed = static_cast<std::uint64_t>(cfg.GetInt("seed", static_cast<std::int64_t>(s.seed)));
  return s;
}

std::vector<double> ValidationBiases(const ModelParams<float>& params, const corpus::Split& split,
                                     const std::vector<std::int64_t>& popularity, int k) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(split.train.num_users()));
  for (UserId u = 0; u < split.train.num_users(); ++u) {
    const auto& hist = split.train.sequence(u);
    const auto recs = seqrec::RecommendTopK(params, hist, k, true);
    out.push_back(MeasureUserBias(metrics::PopularityDist::FromItems(hist, popularity),
                                  metrics::PopularityDist::FromItems(recs.items, popularity)));
  }
  return out;
}

SteeringArtifacts FitSpree(const ModelParams<float>& params, const corpus::Split& split,
                           const std::vector<std::int64_t>& popularity, const SpreeConfig& config) {
  const int len = params.config.max_len;
  config.Validate(len);
  const auto sets = BuildContrastiveSets(popularity, config.num_sequences, len, config.head_frac,
                                         config.tail_frac, config.pad_prefix, config.seed);
  const auto plus = CaptureActivations(params, sets.d_plus, config.probe_positions);
  const auto minus = CaptureActivations(params, sets.d_minus, config.probe_positions);

  SteeringArtifacts a;
  a.probe_grid = ComputeProbeGrid(plus, minus, config.probe_holdout, config.seed + 17);
  a.site = SelectSite(a.probe_grid);
  const auto mean_plus = MeanActivations(plus);
  const auto mean_minus = MeanActivations(minus);
  const std::size_t cell = static_cast<std::size_t>(a.site.level) * plus.positions + a.site.position;
  a.v = SteeringVectorFrom(mean_plus[cell], mean_minus[cell]);

  const int users = split.train.num_users();
  Eigen::MatrixXd features(users, params.config.dim);
  double norm_sum = 0.0;
  for (UserId u = 0; u < users; ++u) {
    features.row(u) = SiteActivation(params, split.train.sequence(u), a.site);
    norm_sum += features.row(u).norm();
  }
  const auto biases = ValidationBiases(params, split, popularity, config.estimator_k);
  const Eigen::VectorXd targets = Eigen::Map<const Eigen::VectorXd>(biases.data(), users);
  const auto fit = FitBiasEstimator(features, targets, config.l1_grid, config.folds, config.seed + 29,
                                    config.estimator_holdout);
  a.estimator = fit.estimator;

  double mean_bias = 0.0;
  for (double b : biases) mean_bias += b;
  a.diagnostics = {{"rho_plus", sets.rho_plus},
                   {"rho_minus", sets.rho_minus},
                   {"head_items", sets.head_items.size()},
                   {"tail_items", sets.tail_items.size()},
                   {"site_probe_accuracy", a.probe_grid.At(a.site.position, a.site.level)},
                   {"estimator_heldout_mse", fit.heldout_mse},
                   {"estimator_heldout_r2", fit.heldout_r2},
                   {"estimator_cv_mse", fit.cv_mse},
                   {"estimator_intercept_only", fit.intercept_only},
                   {"estimator_train_users", fit.train_users},
                   {"estimator_heldout_users", fit.heldout_users},
                   {"mean_validation_bias", mean_bias / std::max(1, users)},
                   {"mean_site_activation_norm", norm_sum / std::max(1, users)},
                   {"config", config.ToJson()}};
  return a;
}

}  // namespace popalign::spree
