#include "popalign/seqrec/model.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "popalign/common/error.h"

namespace popalign::seqrec {

void ModelConfig::Validate() const {
  if (num_blocks < 1) throw ConfigError("model.blocks must be >= 1");
  if (dim < 1) throw ConfigError("model.dim must be >= 1");
  if (max_len < 1) throw ConfigError("model.max_len must be >= 1");
  if (heads < 1 || dim % heads != 0) throw ConfigError("model.dim must be divisible by model.heads");
  if (ffn_dim < 0) throw ConfigError("model.ffn_dim must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must lie in [0, 1)");
  if (catalog_size < 1) throw ConfigError("catalog is empty");
}

nlohmann::json ModelConfig::ToJson() const {
  return {{"num_blocks", num_blocks}, {"dim", dim},         {"max_len", max_len},
          {"heads", heads},           {"ffn_dim", ffn_dim}, {"dropout", dropout},
          {"catalog_size", catalog_size}};
}

ModelConfig ModelConfig::FromJson(const nlohmann::json& j) {
  ModelConfig c;
  c.num_blocks = j.at("num_blocks").get<int>();
  c.dim = j.at("dim").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.catalog_size = j.at("catalog_size").get<int>();
  return c;
}

ModelConfig ModelConfig::FromKeyValue(const KeyValueConfig& cfg, int catalog_size) {
  ModelConfig c;
  c.num_blocks = static_cast<int>(cfg.GetInt("model.blocks", c.num_blocks));
  c.dim = static_cast<int>(cfg.GetInt("model.dim", c.dim));
  c.max_len = static_cast<int>(cfg.GetInt("model.max_len", c.max_len));
  c.heads = static_cast<int>(cfg.GetInt("model.heads", c.heads));
  c.ffn_dim = static_cast<int>(cfg.GetInt("model.ffn_dim", c.ffn_dim));
  c.dropout = cfg.GetDouble("model.dropout", c.dropout);
  c.catalog_size = catalog_size;
  c.Validate();
  return c;
}

template <typename S>
ModelParams<S> ModelParams<S>::Zeros(const ModelConfig& config) {
  config.Validate();
  const int d = config.dim;
  const int f = config.ffn_width();
  ModelParams p;
  p.config = config;
  p.item_embeddings = Matrix<S>::Zero(config.catalog_size, d);
  p.positional_embeddings = Matrix<S>::Zero(config.max_len, d);
  p.blocks.resize(static_cast<std::size_t>(config.num_blocks));
  for (auto& b : p.blocks) {
    b.wq = b.wk = b.wv = b.wo = Matrix<S>::Zero(d, d);
    b.bq = b.bk = b.bv = b.bo = Matrix<S>::Zero(1, d);
    b.ln1_gain = b.ln2_gain = Matrix<S>::Ones(1, d);
    b.ln1_bias = b.ln2_bias = Matrix<S>::Zero(1, d);
    b.w1 = Matrix<S>::Zero(d, f);
    b.b1 = Matrix<S>::Zero(1, f);
    b.w2 = Matrix<S>::Zero(f, d);
    b.b2 = Matrix<S>::Zero(1, d);
  }
  return p;
}

template <typename S>
ModelParams<S> ModelParams<S>::Initialize(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = Zeros(config);
  std::mt19937_64 rng(seed);
  auto fill_normal = [&rng](Matrix<S>& m, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(dist(rng));
  };
  const double d = config.dim;
  const double f = config.ffn_width();
  fill_normal(p.item_embeddings, 1.0 / std::sqrt(d));
  fill_normal(p.positional_embeddings, 1.0 / std::sqrt(d));
  for (auto& b : p.blocks) {
    const double xavier_dd = std::sqrt(1.0 / d);
    fill_normal(b.wq, xavier_dd);
    fill_normal(b.wk, xavier_dd);
    fill_normal(b.wv, xavier_dd);
    fill_normal(b.wo, xavier_dd);
    fill_normal(b.w1, std::sqrt(2.0 / (d + f)));
    fill_normal(b.w2, std::sqrt(2.0 / (d + f)));
  }
  return p;
}

template <typename S>
std::int64_t ModelParams<S>::ParameterCount() const {
  std::int64_t n = 0;
  ForEachTensor([&n](const std::string&, const Matrix<S>& m) { n += m.size(); });
  return n;
}

template <typename S>
bool ModelParams<S>::AllFinite() const {
  bool ok = true;
  ForEachTensor([&ok](const std::string&, const Matrix<S>& m) { ok = ok && m.allFinite(); });
  return ok;
}

template <typename S>
void ModelParams<S>::SetZero() {
  ForEachTensor([](const std::string&, Matrix<S>& m) { m.setZero(); });
}

ItemSequence PadSequence(std::span<const ItemId> history, int max_len) {
  ItemSequence out(static_cast<std::size_t>(max_len), kPadItem);
  const std::size_t n = std::min(history.size(), static_cast<std::size_t>(max_len));
  std::copy(history.end() - static_cast<std::ptrdiff_t>(n), history.end(),
            out.end() - static_cast<std::ptrdiff_t>(n));
  return out;
}

namespace {

constexpr double kLayerNormEps = 1e-5;

template <typename S>
using ColVector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
S Gelu(S x) {
  return S(0.5) * x * (S(1) + std::erf(x / std::numbers::sqrt2_v<S>));
}

template <typename S>
S GeluGrad(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x / std::numbers::sqrt2_v<S>));
  const S pdf = std::exp(S(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<S> / std::numbers::sqrt2_v<S>;
  return cdf + x * pdf;
}

template <typename S>
struct LayerNormCache {
  Matrix<S> normalized;  // (x - mean) * rstd
  ColVector<S> rstd;
};

template <typename S>
Matrix<S> LayerNorm(const Matrix<S>& x, const Matrix<S>& gain, const Matrix<S>& bias,
                    LayerNormCache<S>* cache) {
  const Eigen::Index rows = x.rows();
  const S inv_d = S(1) / static_cast<S>(x.cols());
  Matrix<S> normalized(rows, x.cols());
  ColVector<S> rstd(rows);
  for (Eigen::Index t = 0; t < rows; ++t) {
    const S mean = x.row(t).sum() * inv_d;
    const auto centered = x.row(t).array() - mean;
    const S var = centered.square().sum() * inv_d;
    rstd(t) = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
    normalized.row(t) = centered * rstd(t);
  }
  Matrix<S> out = normalized.array().rowwise() * gain.row(0).array();
  out.rowwise() += bias.row(0);
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->rstd = std::move(rstd);
  }
  return out;
}

template <typename S>
Matrix<S> LayerNormBackward(const Matrix<S>& dout, const LayerNormCache<S>& cache,
                            const Matrix<S>& gain, Matrix<S>& dgain, Matrix<S>& dbias) {
  dgain.row(0) += (dout.array() * cache.normalized.array()).colwise().sum().matrix();
  dbias.row(0) += dout.colwise().sum();
  const Matrix<S> dnorm = dout.array().rowwise() * gain.row(0).array();
  const S inv_d = S(1) / static_cast<S>(dout.cols());
  Matrix<S> dx(dout.rows(), dout.cols());
  for (Eigen::Index t = 0; t < dout.rows(); ++t) {
    const S mean_d = dnorm.row(t).sum() * inv_d;
    const S mean_dn = dnorm.row(t).dot(cache.normalized.row(t)) * inv_d;
    dx.row(t) = (dnorm.row(t).array() - mean_d - cache.normalized.row(t).array() * mean_dn) *
                cache.rstd(t);
  }
  return dx;
}

template <typename S>
struct BlockCache {
  Matrix<S> x;
  Matrix<S> q, k, v;
  std::vector<Matrix<S>> attention;  // per head, T x T
  Matrix<S> context;
  Matrix<S> attn_mask;  // dropout mask on the attention output (empty in eval)
  LayerNormCache<S> ln1;
  Matrix<S> y;
  Matrix<S> pre_act;
  Matrix<S> act;
  Matrix<S> ffn_mask;
  LayerNormCache<S> ln2;
};

template <typename S>
void ZeroInvalidRows(Matrix<S>& m, const std::vector<char>& valid) {
  for (Eigen::Index t = 0; t < m.rows(); ++t) {
    if (!valid[static_cast<std::size_t>(t)]) m.row(t).setZero();
  }
}

// Causal single-block forward. Rows of padded positions come out as zero.
template <typename S>
Matrix<S> BlockForward(const BlockParams<S>& p, const Matrix<S>& x, const std::vector<char>& valid,
                       int heads, DropoutSampler* dropout, BlockCache<S>* cache) {
  const Eigen::Index len = x.rows();
  const Eigen::Index d = x.cols();
  const Eigen::Index dh = d / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  Matrix<S> q = x * p.wq;
  q.rowwise() += p.bq.row(0);
  Matrix<S> k = x * p.wk;
  k.rowwise() += p.bk.row(0);
  Matrix<S> v = x * p.wv;
  v.rowwise() += p.bv.row(0);

  Matrix<S> context = Matrix<S>::Zero(len, d);
  std::vector<Matrix<S>> attention(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const auto qh = q.middleCols(h * dh, dh);
    const auto kh = k.middleCols(h * dh, dh);
    Matrix<S> scores = (qh * kh.transpose()) * scale;
    Matrix<S> a = Matrix<S>::Zero(len, len);
    for (Eigen::Index t = 0; t < len; ++t) {
      if (!valid[static_cast<std::size_t>(t)]) continue;
      S max_score = -std::numeric_limits<S>::infinity();
      for (Eigen::Index j = 0; j <= t; ++j) {
        if (valid[static_cast<std::size_t>(j)]) max_score = std::max(max_score, scores(t, j));
      }
      S denom = 0;
      for (Eigen::Index j = 0; j <= t; ++j) {
        if (!valid[static_cast<std::size_t>(j)]) continue;
        a(t, j) = std::exp(scores(t, j) - max_score);
        denom += a(t, j);
      }
      a.row(t).head(t + 1) /= denom;
    }
    context.middleCols(h * dh, dh) = a * v.middleCols(h * dh, dh);
    attention[static_cast<std::size_t>(h)] = std::move(a);
  }

  Matrix<S> attn_out = context * p.wo;
  attn_out.rowwise() += p.bo.row(0);
  Matrix<S> attn_mask;
  if (dropout) {
    attn_mask = dropout->Sample<S>(len, d);
    attn_out.array() *= attn_mask.array();
  }

  LayerNormCache<S> ln1;
  Matrix<S> y = LayerNorm<S>(x + attn_out, p.ln1_gain, p.ln1_bias, cache ? &ln1 : nullptr);

  Matrix<S> pre_act = y * p.w1;
  pre_act.rowwise() += p.b1.row(0);
  Matrix<S> act = pre_act.unaryExpr([](S z) { return Gelu(z); });
  Matrix<S> ffn_out = act * p.w2;
  ffn_out.rowwise() += p.b2.row(0);
  Matrix<S> ffn_mask;
  if (dropout) {
    ffn_mask = dropout->Sample<S>(len, d);
    ffn_out.array() *= ffn_mask.array();
  }

  LayerNormCache<S> ln2;
  Matrix<S> out = LayerNorm<S>(y + ffn_out, p.ln2_gain, p.ln2_bias, cache ? &ln2 : nullptr);
  ZeroInvalidRows(out, valid);

  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->attention = std::move(attention);
    cache->context = std::move(context);
    cache->attn_mask = std::move(attn_mask);
    cache->ln1 = std::move(ln1);
    cache->y = std::move(y);
    cache->pre_act = std::move(pre_act);
    cache->act = std::move(act);
    cache->ffn_mask = std::move(ffn_mask);
    cache->ln2 = std::move(ln2);
  }
  return out;
}

template <typename S>
Matrix<S> BlockBackward(const BlockParams<S>& p, const BlockCache<S>& c, Matrix<S> dout,
                        const std::vector<char>& valid, int heads, BlockParams<S>& g) {
  ZeroInvalidRows(dout, valid);
  const Eigen::Index d = dout.cols();
  const Eigen::Index dh = d / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  Matrix<S> dr2 = LayerNormBackward<S>(dout, c.ln2, p.ln2_gain, g.ln2_gain, g.ln2_bias);
  Matrix<S> dffn = dr2;
  if (c.ffn_mask.size() > 0) dffn.array() *= c.ffn_mask.array();
  g.w2.noalias() += c.act.transpose() * dffn;
  g.b2.row(0) += dffn.colwise().sum();
  Matrix<S> dpre = (dffn * p.w2.transpose()).cwiseProduct(
      c.pre_act.unaryExpr([](S z) { return GeluGrad(z); }));
  g.w1.noalias() += c.y.transpose() * dpre;
  g.b1.row(0) += dpre.colwise().sum();
  Matrix<S> dy = dr2;
  dy.noalias() += dpre * p.w1.transpose();

  Matrix<S> dr1 = LayerNormBackward<S>(dy, c.ln1, p.ln1_gain, g.ln1_gain, g.ln1_bias);
  Matrix<S> dx = dr1;
  Matrix<S> dattn = dr1;
  if (c.attn_mask.size() > 0) dattn.array() *= c.attn_mask.array();
  g.wo.noalias() += c.context.transpose() * dattn;
  g.bo.row(0) += dattn.colwise().sum();
  const Matrix<S> dcontext = dattn * p.wo.transpose();

  Matrix<S> dq(dout.rows(), d), dk(dout.rows(), d), dv(dout.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const Matrix<S>& a = c.attention[static_cast<std::size_t>(h)];
    const auto dctx_h = dcontext.middleCols(h * dh, dh);
    const Matrix<S> da = dctx_h * c.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh) = a.transpose() * dctx_h;
    const ColVector<S> row_dot = (da.array() * a.array()).rowwise().sum();
    Matrix<S> dscores = a.array() * (da.array().colwise() - row_dot.array());
    dscores *= scale;
    dq.middleCols(h * dh, dh) = dscores * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh) = dscores.transpose() * c.q.middleCols(h * dh, dh);
  }
  g.wq.noalias() += c.x.transpose() * dq;
  g.bq.row(0) += dq.colwise().sum();
  g.wk.noalias() += c.x.transpose() * dk;
  g.bk.row(0) += dk.colwise().sum();
  g.wv.noalias() += c.x.transpose() * dv;
  g.bv.row(0) += dv.colwise().sum();
  dx.noalias() += dq * p.wq.transpose();
  dx.noalias() += dk * p.wk.transpose();
  dx.noalias() += dv * p.wv.transpose();
  ZeroInvalidRows(dx, valid);
  return dx;
}

template <typename S>
std::vector<char> ValidateSequence(const ModelParams<S>& params, std::span<const ItemId> sequence) {
  const auto& cfg = params.config;
  if (static_cast<int>(sequence.size()) != cfg.max_len) {
    throw DataError("sequence length " + std::to_string(sequence.size()) +
                    " does not match model max_len " + std::to_string(cfg.max_len));
  }
  std::vector<char> valid(sequence.size(), 0);
  bool seen_item = false;
  for (std::size_t t = 0; t < sequence.size(); ++t) {
    const ItemId i = sequence[t];
    if (i == kPadItem) {
      if (seen_item) throw DataError("padding must be a prefix of the sequence");
      continue;
    }
    if (i < 0 || i >= cfg.catalog_size) {
      throw DataError("item id " + std::to_string(i) + " outside catalog of size " +
                      std::to_string(cfg.catalog_size));
    }
    valid[t] = 1;
    seen_item = true;
  }
  if (!seen_item) throw DataError("sequence contains only padding");
  return valid;
}

template <typename S>
Matrix<S> EmbedSequence(const ModelParams<S>& params, std::span<const ItemId> sequence,
                        const std::vector<char>& valid) {
  const int len = params.config.max_len;
  Matrix<S> x = Matrix<S>::Zero(len, params.config.dim);
  for (int t = 0; t < len; ++t) {
    if (!valid[static_cast<std::size_t>(t)]) continue;
    x.row(t) = params.item_embeddings.row(sequence[static_cast<std::size_t>(t)]) +
               params.positional_embeddings.row(t);
  }
  return x;
}

template <typename S>
void ApplyIntervention(const Intervention<S>* iv, int level, Matrix<S>& x) {
  if (!iv || iv->level != level) return;
  if (iv->position < 0 || iv->position >= x.rows()) {
    throw ConfigError("intervention position outside the sequence");
  }
  RowVector<S> row = x.row(iv->position);
  iv->apply(row);
  x.row(iv->position) = row;
}

}  // namespace

template <typename S>
ForwardResult<S> Forward(const ModelParams<S>& params, std::span<const ItemId> sequence,
                         bool capture, const Intervention<S>* intervention) {
  const auto valid = ValidateSequence(params, sequence);
  if (intervention && (intervention->level < 0 || intervention->level > params.config.num_blocks)) {
    throw ConfigError("intervention level outside 0..L");
  }
  ForwardResult<S> result;
  if (capture) result.trace.emplace();

  Matrix<S> x = EmbedSequence(params, sequence, valid);
  ApplyIntervention(intervention, 0, x);
  if (capture) result.trace->levels.push_back(x);
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    x = BlockForward<S>(params.blocks[b], x, valid, params.config.heads, nullptr, nullptr);
    ApplyIntervention(intervention, static_cast<int>(b) + 1, x);
    if (capture) result.trace->levels.push_back(x);
  }
  result.user_embedding = x.row(x.rows() - 1);
  return result;
}

template <typename S>
RowVector<S> ScoreItems(const RowVector<S>& user_embedding, const ModelParams<S>& params) {
  return (params.item_embeddings * user_embedding.transpose()).transpose();
}

template <typename S>
S LossAndGradient(const ModelParams<S>& params, std::span<const TrainingExample> batch,
                  ModelParams<S>* grad, DropoutSampler* dropout) {
  const int len = params.config.max_len;
  std::int64_t scored = 0;
  for (const auto& ex : batch) {
    for (ItemId pos : ex.positives) scored += pos != kPadItem;
  }
  if (scored == 0) throw DataError("training batch has no scored positions");
  const S inv_n = S(1) / static_cast<S>(scored);

  S total_loss = 0;
  std::vector<BlockCache<S>> caches(params.blocks.size());
  for (const auto& ex : batch) {
    if (static_cast<int>(ex.positives.size()) != len ||
        static_cast<int>(ex.negatives.size()) != len) {
      throw DataError("training example does not match model max_len");
    }
    const auto valid = ValidateSequence(params, ex.input);
    Matrix<S> x = EmbedSequence(params, ex.input, valid);
    Matrix<S> embed_mask;
    if (dropout) {
      embed_mask = dropout->Sample<S>(x.rows(), x.cols());
      x.array() *= embed_mask.array();
    }
    for (std::size_t b = 0; b < params.blocks.size(); ++b) {
      x = BlockForward<S>(params.blocks[b], x, valid, params.config.heads, dropout,
                          grad ? &caches[b] : nullptr);
    }

    Matrix<S> dx = grad ? Matrix<S>::Zero(len, params.config.dim) : Matrix<S>();
    for (int t = 0; t < len; ++t) {
      const ItemId pos = ex.positives[static_cast<std::size_t>(t)];
      if (pos == kPadItem) continue;
      if (!valid[static_cast<std::size_t>(t)]) {
        throw DataError("positive target at a padded input position");
      }
      auto score = [&](ItemId item, bool positive) {
        if (item < 0 || item >= params.config.catalog_size) {
          throw DataError("training target outside the catalog");
        }
        const S logit = x.row(t).dot(params.item_embeddings.row(item));
        // -log sigmoid(z) = softplus(-z); -log(1 - sigmoid(z)) = softplus(z)
        const S z = positive ? -logit : logit;
        total_loss += z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        if (grad) {
          const S sig = S(1) / (S(1) + std::exp(-logit));
          const S dlogit = (positive ? sig - S(1) : sig) * inv_n;
          dx.row(t) += dlogit * params.item_embeddings.row(item);
          grad->item_embeddings.row(item) += dlogit * x.row(t);
        }
      };
      score(pos, true);
      for (ItemId neg : ex.negatives[static_cast<std::size_t>(t)]) score(neg, false);
    }
    if (!grad) continue;

    for (std::size_t b = params.blocks.size(); b-- > 0;) {
      dx = BlockBackward<S>(params.blocks[b], caches[b], std::move(dx), valid, params.config.heads,
                            grad->blocks[b]);
    }
    if (dropout) dx.array() *= embed_mask.array();
    for (int t = 0; t < len; ++t) {
      if (!valid[static_cast<std::size_t>(t)]) continue;
      grad->item_embeddings.row(ex.input[static_cast<std::size_t>(t)]) += dx.row(t);
      grad->positional_embeddings.row(t) += dx.row(t);
    }
  }
  return total_loss * inv_n;
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template ForwardResult<float> Forward(const ModelParams<float>&, std::span<const ItemId>, bool,
                                      const Intervention<float>*);
template ForwardResult<double> Forward(const ModelParams<double>&, std::span<const ItemId>, bool,
                                       const Intervention<double>*);
template RowVector<float> ScoreItems(const RowVector<float>&, const ModelParams<float>&);
template RowVector<double> ScoreItems(const RowVector<double>&, const ModelParams<double>&);
template float LossAndGradient(const ModelParams<float>&, std::span<const TrainingExample>,
                               ModelParams<float>*, DropoutSampler*);
template double LossAndGradient(const ModelParams<double>&, std::span<const TrainingExample>,
                                ModelParams<double>*, DropoutSampler*);

}  // namespace popalign::seqrec
