#include "popalign/seqrec/train.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "popalign/common/error.h"
#include "popalign/seqrec/eval.h"

namespace popalign::seqrec {

void TrainConfig::Validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (negatives_per_positive < 1) throw ConfigError("train.negatives must be >= 1");
  if (eval_every < 0) throw ConfigError("train.eval_every must be >= 0");
}

nlohmann::json TrainConfig::ToJson() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"negatives_per_positive", negatives_per_positive},
          {"seed", seed},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"eval_every", eval_every}};
}

TrainConfig TrainConfig::FromKeyValue(const KeyValueConfig& cfg) {
  TrainConfig t;
  t.epochs = static_cast<int>(cfg.GetInt("train.epochs", t.epochs));
  t.batch_size = static_cast<int>(cfg.GetInt("train.batch_size", t.batch_size));
  t.learning_rate = cfg.GetDouble("train.learning_rate", t.learning_rate);
  t.negatives_per_positive = static_cast<int>(cfg.GetInt("train.negatives", t.negatives_per_positive));
  t.seed = static_cast<std::uint64_t>(cfg.GetInt("seed", static_cast<std::int64_t>(t.seed)));
  t.adam_beta1 = cfg.GetDouble("train.adam_beta1", t.adam_beta1);
  t.adam_beta2 = cfg.GetDouble("train.adam_beta2", t.adam_beta2);
  t.eval_every = static_cast<int>(cfg.GetInt("train.eval_every", t.eval_every));
  t.Validate();
  return t;
}

template <typename S>
AdamOptimizer<S>::AdamOptimizer(const ModelParams<S>& like, double lr, double beta1, double beta2,
                                double eps)
    : m_(ModelParams<S>::Zeros(like.config)),
      v_(ModelParams<S>::Zeros(like.config)),
      lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  m_.SetZero();
  v_.SetZero();
}

template <typename S>
void AdamOptimizer<S>::Step(ModelParams<S>& params, const ModelParams<S>& grad) {
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  const S step_size = static_cast<S>(lr_ * std::sqrt(c2) / c1);
  const S b1 = static_cast<S>(beta1_), b2 = static_cast<S>(beta2_);
  const S eps = static_cast<S>(eps_ * std::sqrt(c2));

  std::vector<Matrix<S>*> p, m, v;
  std::vector<const Matrix<S>*> g;
  params.ForEachTensor([&p](const std::string&, Matrix<S>& x) { p.push_back(&x); });
  m_.ForEachTensor([&m](const std::string&, Matrix<S>& x) { m.push_back(&x); });
  v_.ForEachTensor([&v](const std::string&, Matrix<S>& x) { v.push_back(&x); });
  grad.ForEachTensor([&g](const std::string&, const Matrix<S>& x) { g.push_back(&x); });
  for (std::size_t k = 0; k < p.size(); ++k) {
    m[k]->array() = b1 * m[k]->array() + (S(1) - b1) * g[k]->array();
    v[k]->array() = b2 * v[k]->array() + (S(1) - b2) * g[k]->array().square();
    p[k]->array() -= step_size * m[k]->array() / (v[k]->array().sqrt() + eps);
  }
}

template class AdamOptimizer<float>;
template class AdamOptimizer<double>;

std::vector<TrainingExample> BuildTrainingExamples(const corpus::InteractionLog& train,
                                                   int max_len, std::vector<UserId>* users) {
  std::vector<TrainingExample> out;
  for (UserId u = 0; u < train.num_users(); ++u) {
    const auto& seq = train.sequence(u);
    if (seq.size() < 2) continue;
    const std::span<const ItemId> all(seq);
    TrainingExample ex;
    ex.input = PadSequence(all.first(seq.size() - 1), max_len);
    ex.positives = PadSequence(all.subspan(1), max_len);
    ex.negatives.assign(static_cast<std::size_t>(max_len), {});
    out.push_back(std::move(ex));
    if (users) users->push_back(u);
  }
  return out;
}

void SampleNegatives(TrainingExample& example, const ItemSequence& history, int catalog_size,
                     int count, std::mt19937_64& rng) {
  std::vector<char> seen(static_cast<std::size_t>(catalog_size), 0);
  std::size_t distinct = 0;
  for (ItemId i : history) {
    if (!seen[static_cast<std::size_t>(i)]) {
      seen[static_cast<std::size_t>(i)] = 1;
      ++distinct;
    }
  }
  if (distinct >= static_cast<std::size_t>(catalog_size)) {
    throw DataError("user history covers the whole catalog; no negatives available");
  }
  std::uniform_int_distribution<ItemId> pick(0, catalog_size - 1);
  example.negatives.resize(example.positives.size());
  for (std::size_t t = 0; t < example.positives.size(); ++t) {
    auto& negs = example.negatives[t];
    negs.clear();
    if (example.positives[t] == kPadItem) continue;
    while (static_cast<int>(negs.size()) < count) {
      const ItemId cand = pick(rng);
      if (!seen[static_cast<std::size_t>(cand)]) negs.push_back(cand);
    }
  }
}

namespace {

double ValidationNdcg10(const ModelParams<float>& params, const corpus::Split& split) {
  double total = 0.0;
  for (UserId u = 0; u < split.train.num_users(); ++u) {
    const auto& seq = split.train.sequence(u);
    if (seq.empty()) continue;
    const auto recs = RecommendTopK(params, seq, 10, true);
    total += NdcgAtK(recs, split.valid[static_cast<std::size_t>(u)], 10);
  }
  return total / std::max(1, split.train.num_users());
}

}  // namespace

TrainResult Train(const corpus::Split& split, const ModelConfig& model_config,
                  const TrainConfig& tc, const EpochCallback& on_epoch) {
  model_config.Validate();
  tc.Validate();
  std::vector<UserId> users;
  auto examples = BuildTrainingExamples(split.train, model_config.max_len, &users);
  if (examples.empty()) throw DataError("train split has no user with two or more items");

  TrainResult result{ModelParams<float>::Initialize(model_config, tc.seed), {}};
  auto& params = result.params;
  AdamOptimizer<float> adam(params, tc.learning_rate, tc.adam_beta1, tc.adam_beta2, tc.adam_eps);
  ModelParams<float> grad = ModelParams<float>::Zeros(model_config);
  std::mt19937_64 rng(tc.seed ^ 0x9E3779B97F4A7C15ULL);
  DropoutSampler dropout(model_config.dropout, tc.seed + 1);
  DropoutSampler* dropout_ptr = model_config.dropout > 0.0 ? &dropout : nullptr;

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<TrainingExample> batch;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
      batch.clear();
      for (std::size_t k = start; k < end; ++k) {
        TrainingExample ex = examples[order[k]];
        SampleNegatives(ex, split.train.sequence(users[order[k]]), model_config.catalog_size,
                        tc.negatives_per_positive, rng);
        batch.push_back(std::move(ex));
      }
      grad.SetZero();
      const float loss = LossAndGradient<float>(params, batch, &grad, dropout_ptr);
      if (!std::isfinite(loss)) {
        throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batches));
      }
      adam.Step(params, grad);
      loss_sum += loss;
      ++batches;
    }
    EpochLog entry{epoch, loss_sum / batches, std::numeric_limits<double>::quiet_NaN()};
    if (tc.eval_every > 0 && (epoch % tc.eval_every == 0 || epoch == tc.epochs)) {
      entry.valid_ndcg10 = ValidationNdcg10(params, split);
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  if (!params.AllFinite()) throw NumericError("training produced non-finite parameters");
  return result;
}

}  // namespace popalign::seqrec
