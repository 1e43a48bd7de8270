#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "popalign/common/kv_config.h"
#include "popalign/common/types.h"

namespace popalign::seqrec {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using RowVector = Eigen::Matrix<S, 1, Eigen::Dynamic>;

struct ModelConfig {
  int num_blocks = 3;     // L
  int dim = 64;           // d
  int max_len = 200;      // T
  int heads = 1;
  int ffn_dim = 0;        // 0 means dim
  double dropout = 0.2;
  int catalog_size = 0;   // |I|

  int ffn_width() const { return ffn_dim > 0 ? ffn_dim : dim; }
  // Throws ConfigError on inconsistent values.
  void Validate() const;

  nlohmann::json ToJson() const;
  static ModelConfig FromJson(const nlohmann::json& j);
  // Reads model.* keys; catalog_size is supplied by the data.
  static ModelConfig FromKeyValue(const KeyValueConfig& cfg, int catalog_size);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// One post-LN transformer block:
//   y = LN1(x + Attn(x));  out = LN2(y + MLP(y))
template <typename S>
struct BlockParams {
  Matrix<S> wq, wk, wv, wo;     // d x d
  Matrix<S> bq, bk, bv, bo;     // 1 x d
  Matrix<S> ln1_gain, ln1_bias;  // 1 x d
  Matrix<S> w1, b1;             // d x f, 1 x f
  Matrix<S> w2, b2;             // f x d, 1 x d
  Matrix<S> ln2_gain, ln2_bias;  // 1 x d
};

template <typename S>
struct ModelParams {
  ModelConfig config;
  Matrix<S> item_embeddings;        // |I| x d, shared by input and scoring
  Matrix<S> positional_embeddings;  // T x d
  std::vector<BlockParams<S>> blocks;

  static ModelParams Zeros(const ModelConfig& config);
  static ModelParams Initialize(const ModelConfig& config, std::uint64_t seed);

  // Visits every tensor as (name, matrix) in a fixed order.
  template <typename F>
  void ForEachTensor(F&& f) {
    f(std::string("item_embeddings"), item_embeddings);
    f(std::string("positional_embeddings"), positional_embeddings);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      VisitBlock(blocks[b], "block" + std::to_string(b) + ".", f);
    }
  }
  template <typename F>
  void ForEachTensor(F&& f) const {
    const_cast<ModelParams*>(this)->ForEachTensor(
        [&f](const std::string& name, Matrix<S>& m) { f(name, static_cast<const Matrix<S>&>(m)); });
  }

  template <typename T>
  ModelParams<T> Cast() const;

  std::int64_t ParameterCount() const;
  bool AllFinite() const;
  void SetZero();

 private:
  template <typename F>
  static void VisitBlock(BlockParams<S>& p, const std::string& prefix, F& f) {
    f(prefix + "wq", p.wq);
    f(prefix + "bq", p.bq);
    f(prefix + "wk", p.wk);
    f(prefix + "bk", p.bk);
    f(prefix + "wv", p.wv);
    f(prefix + "bv", p.bv);
    f(prefix + "wo", p.wo);
    f(prefix + "bo", p.bo);
    f(prefix + "ln1_gain", p.ln1_gain);
    f(prefix + "ln1_bias", p.ln1_bias);
    f(prefix + "w1", p.w1);
    f(prefix + "b1", p.b1);
    f(prefix + "w2", p.w2);
    f(prefix + "b2", p.b2);
    f(prefix + "ln2_gain", p.ln2_gain);
    f(prefix + "ln2_bias", p.ln2_bias);
  }
};

template <typename S>
template <typename T>
ModelParams<T> ModelParams<S>::Cast() const {
  ModelParams<T> out = ModelParams<T>::Zeros(config);
  std::vector<const Matrix<S>*> src;
  ForEachTensor([&src](const std::string&, const Matrix<S>& m) { src.push_back(&m); });
  std::size_t k = 0;
  out.ForEachTensor([&](const std::string&, Matrix<T>& m) { m = src[k++]->template cast<T>(); });
  return out;
}

// Residual stream x_{t,l} for l = 0..L; levels[0] is the embedding sum and
// levels[L].row(T-1) the user embedding.
template <typename S>
struct ActivationTrace {
  std::vector<Matrix<S>> levels;
};

// Rewrites the residual activation at (level, position) before downstream
// computation consumes it. level 0 is the embedding sum; level L with
// position T-1 is the user embedding itself.
template <typename S>
struct Intervention {
  int level = 0;
  int position = 0;
  std::function<void(RowVector<S>&)> apply;
};

template <typename S>
struct ForwardResult {
  RowVector<S> user_embedding;
  std::optional<ActivationTrace<S>> trace;
};

// Left-pads (or keeps the most recent `max_len` items of) a history.
ItemSequence PadSequence(std::span<const ItemId> history, int max_len);

// Eval-mode forward pass (no dropout). `sequence` must have length T with
// padding only as a prefix and a real item in the last slot. Throws
// DataError for out-of-range ids or an all-pad input.
template <typename S>
ForwardResult<S> Forward(const ModelParams<S>& params, std::span<const ItemId> sequence,
                         bool capture = false, const Intervention<S>* intervention = nullptr);

// logits_i = h . e_i over the whole catalog.
template <typename S>
RowVector<S> ScoreItems(const RowVector<S>& user_embedding, const ModelParams<S>& params);

// A single next-item training sequence. All vectors have length T; a
// position contributes to the loss iff positives[t] is not pad.
struct TrainingExample {
  ItemSequence input;
  ItemSequence positives;
  std::vector<ItemSequence> negatives;  // per position, empty where positives[t] is pad
};

// Inverted-dropout mask source. Passing no sampler means eval mode.
class DropoutSampler {
 public:
  DropoutSampler(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {}

  double rate() const { return rate_; }

  // rows x cols mask of 0 or 1/(1-rate).
  template <typename S>
  Matrix<S> Sample(Eigen::Index rows, Eigen::Index cols) {
    Matrix<S> mask(rows, cols);
    const S keep = static_cast<S>(1.0 / (1.0 - rate_));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
      mask.data()[i] = unif(rng_) < rate_ ? S(0) : keep;
    }
    return mask;
  }

 private:
  double rate_;
  std::mt19937_64 rng_;
};

// Mean binary cross-entropy over all scored positions of the batch
// (positive label for `positives`, negative for each sampled negative).
// Accumulates d(loss)/d(params) into *grad when non-null.
template <typename S>
S LossAndGradient(const ModelParams<S>& params, std::span<const TrainingExample> batch,
                  ModelParams<S>* grad, DropoutSampler* dropout = nullptr);

}  // namespace popalign::seqrec
