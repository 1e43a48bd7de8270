#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "popalign/corpus/corpus.h"
#include "popalign/seqrec/model.h"

namespace popalign::seqrec {

struct TrainConfig {
  int epochs = 500;
  int batch_size = 128;
  double learning_rate = 1e-3;
  int negatives_per_positive = 1;
  std::uint64_t seed = 42;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-8;
  // Validation NDCG@10 every `eval_every` epochs; 0 disables it.
  int eval_every = 0;

  void Validate() const;
  nlohmann::json ToJson() const;
  static TrainConfig FromKeyValue(const KeyValueConfig& cfg);
};

template <typename S>
class AdamOptimizer {
 public:
  AdamOptimizer(const ModelParams<S>& like, double lr, double beta1, double beta2, double eps);

  void Step(ModelParams<S>& params, const ModelParams<S>& grad);
  std::int64_t steps() const { return step_; }

 private:
  ModelParams<S> m_;
  ModelParams<S> v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t step_ = 0;
};

// Next-item examples from each user's train sequence: input = items[0..n-2],
// positives = items[1..n-1], both truncated to the last T and left-padded.
// Users with fewer than two train items yield no example. Negatives are empty.
std::vector<TrainingExample> BuildTrainingExamples(const corpus::InteractionLog& train,
                                                   int max_len, std::vector<UserId>* users = nullptr);

// Fills negatives: `count` items per scored position drawn uniformly from the
// catalog, excluding every item in `history`.
void SampleNegatives(TrainingExample& example, const ItemSequence& history, int catalog_size,
                     int count, std::mt19937_64& rng);

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double valid_ndcg10 = 0.0;  // NaN when not evaluated
};

struct TrainResult {
  ModelParams<float> params;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Adam on the sampled binary cross-entropy objective. Deterministic for a
// given seed. Throws NumericError when the loss becomes non-finite.
TrainResult Train(const corpus::Split& split, const ModelConfig& model_config,
                  const TrainConfig& train_config, const EpochCallback& on_epoch = {});

}  // namespace popalign::seqrec
