#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "popalign/common/types.h"
#include "popalign/seqrec/eval.h"

namespace popalign::baselines {

enum class Method { kIpr, kPp, kRandomNeighbors, kPopSteer };

Method ParseMethod(const std::string& name);
std::string MethodName(Method m);

struct BaselineConfig {
  Method method = Method::kIpr;
  double strength = 0.0;  // alpha, or lambda for popsteer
  std::uint64_t seed = 42;

  // alpha / lambda must lie in [0, 1].
  void Validate() const;
};

// ---------------------------------------------------------------------------
// Logit transforms

// logits / (1 + alpha * s / max s) for positive logits. Negative logits are
// multiplied by the same factor so the adjustment always demotes.
std::vector<double> IprRescale(std::span<const double> logits, const std::vector<std::int64_t>& popularity,
                               double alpha);

// Dense rank of the user's per-item count divided by the largest rank;
// unseen items get 0, the most frequent items 1.
std::vector<double> PersonalPopularity(std::span<const ItemId> history, int catalog_size);

// alpha * s_pp + (1 - alpha) * minmax(logits). A constant logit vector maps to 0.
std::vector<double> PpInterpolate(std::span<const double> logits, std::span<const ItemId> history,
                                  double alpha);

// M = round(K (1 + alpha)) highest-scoring eligible items, then K of them
// sampled uniformly without replacement and listed by score.
seqrec::RecList RandomNeighbors(std::span<const double> scores, int k, double alpha, std::uint64_t seed,
                                const std::vector<char>& excluded = {});

int NeighborhoodSize(int k, double alpha);

// ---------------------------------------------------------------------------
// Sparse autoencoder

struct SparseAutoencoder {
  Eigen::MatrixXd encoder;       // d x D
  Eigen::RowVectorXd encoder_bias;  // 1 x D
  Eigen::MatrixXd decoder;       // D x d
  Eigen::RowVectorXd decoder_bias;  // 1 x d
  int k = 32;

  int input_dim() const { return static_cast<int>(encoder.rows()); }
  int latent_dim() const { return static_cast<int>(encoder.cols()); }

  // Pre-activations (x - b_dec) W_enc + b_enc with all but the k largest
  // values set to zero. Ties go to the lower latent index.
  Eigen::RowVectorXd Encode(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
  Eigen::RowVectorXd Decode(const Eigen::Ref<const Eigen::RowVectorXd>& z) const;
  Eigen::RowVectorXd Reconstruct(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
};

struct SaeConfig {
  int latent_dim = 512;
  int k = 32;
  double learning_rate = 1e-4;
  int max_epochs = 500;
  int patience = 10;
  double train_frac = 0.9;
  int batch_size = 64;
  std::uint64_t seed = 42;

  void Validate(int input_dim) const;
  nlohmann::json ToJson() const;
};

struct SaeTrainResult {
  SparseAutoencoder sae;
  double train_mse = 0.0;
  double valid_mse = 0.0;
  int epochs_run = 0;
  int best_epoch = 0;
  bool stopped_early = false;
  std::vector<double> valid_curve;
};

// Mean squared reconstruction error per coordinate.
double ReconstructionMse(const SparseAutoencoder& sae, const Eigen::MatrixXd& x);

// Adam on reconstruction MSE with top-k sparsity; keeps the parameters of the
// best validation epoch. Throws DataError with fewer than 100 rows and
// NumericError on divergence.
SaeTrainResult TrainSae(const Eigen::MatrixXd& embeddings, const SaeConfig& config);

// Point-biserial correlation of each latent's activation with membership in
// the popular set (1) versus the niche set (0). Constant latents score 0.
std::vector<double> LatentPopularityScores(const SparseAutoencoder& sae, const Eigen::MatrixXd& popular,
                                           const Eigen::MatrixXd& niche);

inline constexpr double kLatentSignificance = 0.3;

// Zeroes the ceil(lambda * k_pop) highest-scoring active latents among those
// scoring above the cut (k_pop = number of such latents), then decodes.
Eigen::RowVectorXd PopSteerApply(const Eigen::Ref<const Eigen::RowVectorXd>& h, const SparseAutoencoder& sae,
                                 const std::vector<double>& latent_scores, double lambda,
                                 double cut = kLatentSignificance);

// Zeroes a fixed latent set, then decodes.
Eigen::RowVectorXd AblateLatents(const Eigen::Ref<const Eigen::RowVectorXd>& h, const SparseAutoencoder& sae,
                                 const std::vector<int>& latents);

void SaveSae(const SparseAutoencoder& sae, const std::vector<double>& latent_scores, const std::string& path,
             const nlohmann::json& meta = nlohmann::json::object());
SparseAutoencoder LoadSae(const std::string& path, std::vector<double>* latent_scores,
                          nlohmann::json* meta = nullptr);

}  // namespace popalign::baselines
