#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "popalign/common/types.h"
#include "popalign/corpus/corpus.h"
#include "popalign/metrics/popularity_dist.h"
#include "popalign/seqrec/model.h"

namespace popalign::spree {

using seqrec::Matrix;
using seqrec::ModelParams;

// ---------------------------------------------------------------------------
// Contrastive sequences

struct ContrastiveSets {
  std::vector<ItemSequence> d_plus;   // popular-item sequences
  std::vector<ItemSequence> d_minus;  // niche-item sequences
  double rho_plus = 0.0;
  double rho_minus = 0.0;
  int pad_prefix = 0;
  std::vector<ItemId> head_items;  // I+
  std::vector<ItemId> tail_items;  // I-
};

// rho_plus is the popularity of the item at rank ceil(head_frac * n) in
// descending order; I+ = {i : s(i) >= rho_plus}. rho_minus and I- mirror this
// from the bottom. Each sequence is pad_prefix pads followed by T - pad_prefix
// items drawn uniformly with replacement.
ContrastiveSets BuildContrastiveSets(const std::vector<std::int64_t>& popularity, int n, int length,
                                     double head_frac, double tail_frac, int pad_prefix,
                                     std::uint64_t seed);

// ---------------------------------------------------------------------------
// Activations

// Residual activations of N sequences per cell (level, position), stored in
// single precision. cell(level, t) is N x d; it is left empty at positions
// that were not requested or are padding in some sequence.
struct ActivationBank {
  int levels = 0;     // L + 1
  int positions = 0;  // T
  int dim = 0;
  std::int64_t count = 0;
  std::vector<Matrix<float>> cells;

  const Matrix<float>& cell(int level, int t) const {
    return cells[static_cast<std::size_t>(level) * positions + t];
  }
  bool has(int level, int t) const { return cell(level, t).rows() > 0; }
};

// `positions` empty means every position that is non-pad in all sequences.
ActivationBank CaptureActivations(const ModelParams<float>& params,
                                  const std::vector<ItemSequence>& sequences,
                                  const std::vector<int>& positions = {});

// Per-cell column means of a bank (empty where the bank is empty).
std::vector<Eigen::RowVectorXd> MeanActivations(const ActivationBank& bank);

struct MeanActivationPair {
  std::vector<Eigen::RowVectorXd> plus;
  std::vector<Eigen::RowVectorXd> minus;
  int positions = 0;

  const Eigen::RowVectorXd& PlusAt(int level, int t) const {
    return plus[static_cast<std::size_t>(level) * positions + t];
  }
  const Eigen::RowVectorXd& MinusAt(int level, int t) const {
    return minus[static_cast<std::size_t>(level) * positions + t];
  }
};

MeanActivationPair CaptureMeanActivations(const ModelParams<float>& params, const ContrastiveSets& sets,
                                          const std::vector<int>& positions = {});

// (x_minus - x_plus) / ||x_minus - x_plus||. Throws NumericError when the
// difference vanishes.
Eigen::RowVectorXd SteeringVectorFrom(const Eigen::RowVectorXd& x_plus, const Eigen::RowVectorXd& x_minus);

// ---------------------------------------------------------------------------
// Linear probe

// L2-regularized logistic regression fitted by Newton's method on a random
// (1 - holdout_frac) split; returns accuracy on the rest. Re-splits when the
// holdout lacks a class.
double TrainProbe(const Eigen::MatrixXd& plus, const Eigen::MatrixXd& minus, double holdout_frac,
                  std::uint64_t seed, double ridge = 1e-2);

struct Site {
  int position = 0;  // 0-based t
  int level = 0;     // 0..L

  friend bool operator==(const Site&, const Site&) = default;
};

struct ProbeCell {
  int position = 0;
  int level = 0;
  double accuracy = 0.0;
};

struct ProbeGrid {
  std::vector<ProbeCell> cells;

  // NaN when absent.
  double At(int position, int level) const;
};

// One probe per cell present in both banks.
ProbeGrid ComputeProbeGrid(const ActivationBank& plus, const ActivationBank& minus, double holdout_frac,
                           std::uint64_t seed);

// Argmax; ties go to the larger level, then the larger position. Throws
// ConfigError on an empty grid.
Site SelectSite(const ProbeGrid& grid);

void WriteProbeGridCsv(const std::string& path, const ProbeGrid& grid,
                       const std::vector<std::string>& preamble = {});

// ---------------------------------------------------------------------------
// Bias estimation

double MeasureUserBias(const metrics::PopularityDist& hist, const metrics::PopularityDist& recs);

struct BiasEstimator {
  Eigen::VectorXd weights;
  double intercept = 0.0;
  double l1_penalty = 0.0;

  // Clamped to [-0.5, 0.5].
  double Predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
};

struct LassoModel {
  Eigen::VectorXd weights;
  double intercept = 0.0;
  int iterations = 0;
};

// Minimizes (1 / 2n) ||y - X w - b||^2 + alpha ||w||_1 by cyclic coordinate
// descent; the intercept is unpenalized.
LassoModel FitLasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double alpha,
                    int max_iterations = 2000, double tolerance = 1e-8);

struct EstimatorFit {
  BiasEstimator estimator;
  double heldout_mse = 0.0;
  double heldout_r2 = 0.0;
  double cv_mse = 0.0;
  bool intercept_only = false;
  std::int64_t train_users = 0;
  std::int64_t heldout_users = 0;
};

std::vector<double> DefaultL1Grid();

// Splits the rows into disjoint fit / held-out subsets, picks the penalty by
// k-fold CV on the fit subset, refits there, and scores the held-out subset.
// Throws DataError with fewer than 10 rows or non-finite features.
EstimatorFit FitBiasEstimator(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets,
                              const std::vector<double>& l1_grid, int folds, std::uint64_t seed,
                              double holdout_frac = 0.2);

// ---------------------------------------------------------------------------
// Steering

struct SteeringArtifacts {
  Site site;
  Eigen::RowVectorXd v;
  ProbeGrid probe_grid;
  BiasEstimator estimator;
  nlohmann::json diagnostics = nlohmann::json::object();
};

// x* = x + lambda * v at the site.
seqrec::Intervention<float> SteerVanilla(const SteeringArtifacts& artifacts, double lambda);

// x* = x + lambda * f(x) * v with f evaluated on the unsteered activation.
// When `last_scale` is given, it receives lambda * f(x) of the latest call.
seqrec::Intervention<float> SteerAdaptive(const SteeringArtifacts& artifacts, double lambda,
                                          double* last_scale = nullptr);

void SaveSteeringArtifacts(const SteeringArtifacts& artifacts, const std::string& path,
                           const nlohmann::json& meta = nlohmann::json::object());
SteeringArtifacts LoadSteeringArtifacts(const std::string& path, nlohmann::json* meta = nullptr);

// ---------------------------------------------------------------------------
// End-to-end fit

struct SpreeConfig {
  int num_sequences = 5000;  // N per set
  double head_frac = 0.1;
  double tail_frac = 0.1;
  int pad_prefix = 100;
  double probe_holdout = 0.2;
  // Positions probed; empty means every non-pad position.
  std::vector<int> probe_positions;
  int estimator_k = 100;
  int folds = 5;
  std::vector<double> l1_grid = DefaultL1Grid();
  double estimator_holdout = 0.2;
  std::uint64_t seed = 42;

  void Validate(int max_len) const;
  nlohmann::json ToJson() const;
  static SpreeConfig FromKeyValue(const KeyValueConfig& cfg);
};

// Residual activation of a padded history at the site.
Eigen::RowVectorXd SiteActivation(const ModelParams<float>& params, std::span<const ItemId> history,
                                  const Site& site);

// e(u) for every user from the base model's top-K on the validation context
// (train sequence, train items excluded) against the train history.
std::vector<double> ValidationBiases(const ModelParams<float>& params, const corpus::Split& split,
                                     const std::vector<std::int64_t>& popularity, int k);

SteeringArtifacts FitSpree(const ModelParams<float>& params, const corpus::Split& split,
                           const std::vector<std::int64_t>& popularity, const SpreeConfig& config);

}  // namespace popalign::spree
