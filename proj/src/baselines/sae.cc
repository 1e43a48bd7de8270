#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "popalign/baselines/baselines.h"
#include "popalign/common/container.h"
#include "popalign/common/error.h"

namespace popalign::baselines {

namespace {

// Keeps the k largest entries of each row; returns the mask.
Eigen::MatrixXd TopKMask(const Eigen::MatrixXd& a, int k) {
  Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(a.rows(), a.cols());
  std::vector<int> idx(static_cast<std::size_t>(a.cols()));
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int x, int y) {
      if (a(r, x) != a(r, y)) return a(r, x) > a(r, y);
      return x < y;
    });
    for (int j = 0; j < k; ++j) mask(r, idx[static_cast<std::size_t>(j)]) = 1.0;
  }
  return mask;
}

struct AdamState {
  Eigen::MatrixXd m, v;
};

void AdamUpdate(Eigen::Ref<Eigen::MatrixXd> p, const Eigen::MatrixXd& g, AdamState& s, double lr, int step) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (s.m.size() == 0) {
    s.m = Eigen::MatrixXd::Zero(p.rows(), p.cols());
    s.v = Eigen::MatrixXd::Zero(p.rows(), p.cols());
  }
  s.m = b1 * s.m + (1 - b1) * g;
  s.v = b2 * s.v + (1 - b2) * g.cwiseProduct(g);
  const double c1 = 1 - std::pow(b1, step), c2 = 1 - std::pow(b2, step);
  p.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + eps);
}

Eigen::MatrixXd Reconstruct(const SparseAutoencoder& sae, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd a = ((x.rowwise() - sae.decoder_bias) * sae.encoder).rowwise() + sae.encoder_bias;
  const Eigen::MatrixXd z = a.cwiseProduct(TopKMask(a, sae.k));
  return (z * sae.decoder).rowwise() + sae.decoder_bias;
}

}  // namespace

Eigen::RowVectorXd SparseAutoencoder::Encode(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  const Eigen::MatrixXd a = (x - decoder_bias) * encoder + encoder_bias;
  return a.cwiseProduct(TopKMask(a, k));
}

Eigen::RowVectorXd SparseAutoencoder::Decode(const Eigen::Ref<const Eigen::RowVectorXd>& z) const {
  return z * decoder + decoder_bias;
}

Eigen::RowVectorXd SparseAutoencoder::Reconstruct(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  return Decode(Encode(x));
}

void SaeConfig::Validate(int input_dim) const {
  if (latent_dim < 1) throw ConfigError("sae.latent_dim must be >= 1");
  if (k < 1 || k > latent_dim) throw ConfigError("sae.k must lie in [1, latent_dim]");
  if (!(learning_rate > 0.0)) throw ConfigError("sae.learning_rate must be > 0");
  if (max_epochs < 1 || patience < 1 || batch_size < 1) throw ConfigError("sae epochs, patience, batch must be >= 1");
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("sae.train_frac must lie in (0, 1)");
  if (input_dim < 1) throw ConfigError("SAE input dimension must be >= 1");
}

nlohmann::json SaeConfig::ToJson() const {
  return {{"latent_dim", latent_dim}, {"k", k},       {"learning_rate", learning_rate}, {"max_epochs", max_epochs},
          {"patience", patience},     {"train_frac", train_frac}, {"batch_size", batch_size}, {"seed", seed}};
}

double ReconstructionMse(const SparseAutoencoder& sae, const Eigen::MatrixXd& x) {
  if (x.rows() == 0) return 0.0;
  return (Reconstruct(sae, x) - x).squaredNorm() / static_cast<double>(x.size());
}

SaeTrainResult TrainSae(const Eigen::MatrixXd& data, const SaeConfig& cfg) {
  const int d = static_cast<int>(data.cols());
  cfg.Validate(d);
  if (data.rows() < 100) throw DataError("SAE training needs at least 100 embeddings");
  if (!data.allFinite()) throw DataError("non-finite SAE training input");

  std::mt19937_64 rng(cfg.seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<Eigen::Index>(std::llround(cfg.train_frac * static_cast<double>(data.rows())));
  Eigen::MatrixXd train(n_train, d), valid(data.rows() - n_train, d);
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    (r < n_train ? train.row(r) : valid.row(r - n_train)) = data.row(order[static_cast<std::size_t>(r)]);
  }

  SparseAutoencoder sae;
  sae.k = cfg.k;
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  sae.encoder = Eigen::MatrixXd(d, cfg.latent_dim);
  for (Eigen::Index i = 0; i < sae.encoder.size(); ++i) sae.encoder.data()[i] = normal(rng);
  sae.decoder = sae.encoder.transpose();
  sae.encoder_bias = Eigen::RowVectorXd::Zero(cfg.latent_dim);
  sae.decoder_bias = train.colwise().mean();

  AdamState s_enc, s_benc, s_dec, s_bdec;
  SaeTrainResult result;
  SparseAutoencoder best = sae;
  double best_valid = std::numeric_limits<double>::infinity();
  int since_best = 0, step = 0;
  std::vector<Eigen::Index> batch_order(static_cast<std::size_t>(n_train));
  std::iota(batch_order.begin(), batch_order.end(), 0);
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(batch_order.begin(), batch_order.end(), rng);
    for (Eigen::Index start = 0; start < n_train; start += cfg.batch_size) {
      const Eigen::Index rows = std::min<Eigen::Index>(cfg.batch_size, n_train - start);
      Eigen::MatrixXd x(rows, d);
      for (Eigen::Index r = 0; r < rows; ++r) x.row(r) = train.row(batch_order[static_cast<std::size_t>(start + r)]);
      const Eigen::MatrixXd xt = x.rowwise() - sae.decoder_bias;
      const Eigen::MatrixXd a = (xt * sae.encoder).rowwise() + sae.encoder_bias;
      const Eigen::MatrixXd mask = TopKMask(a, sae.k);
      const Eigen::MatrixXd z = a.cwiseProduct(mask);
      const Eigen::MatrixXd out = (z * sae.decoder).rowwise() + sae.decoder_bias;
      const Eigen::MatrixXd dout = 2.0 * (out - x) / static_cast<double>(x.size());
      const Eigen::MatrixXd g_dec = z.transpose() * dout;
      const Eigen::MatrixXd da = (dout * sae.decoder.transpose()).cwiseProduct(mask);
      const Eigen::MatrixXd g_enc = xt.transpose() * da;
      const Eigen::RowVectorXd g_benc = da.colwise().sum();
      const Eigen::RowVectorXd g_bdec = dout.colwise().sum() - (da * sae.encoder.transpose()).colwise().sum();
      ++step;
      AdamUpdate(sae.encoder, g_enc, s_enc, cfg.learning_rate, step);
      AdamUpdate(sae.encoder_bias, g_benc, s_benc, cfg.learning_rate, step);
      AdamUpdate(sae.decoder, g_dec, s_dec, cfg.learning_rate, step);
      AdamUpdate(sae.decoder_bias, g_bdec, s_bdec, cfg.learning_rate, step);
    }
    const double v = ReconstructionMse(sae, valid);
    if (!std::isfinite(v)) throw NumericError("SAE training diverged at epoch " + std::to_string(epoch));
    result.valid_curve.push_back(v);
    result.epochs_run = epoch;
    if (v < best_valid) {
      best_valid = v;
      best = sae;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      result.stopped_early = true;
      break;
    }
  }
  result.sae = best;
  result.valid_mse = best_valid;
  result.train_mse = ReconstructionMse(best, train);
  return result;
}

std::vector<double> LatentPopularityScores(const SparseAutoencoder& sae, const Eigen::MatrixXd& popular,
                                           const Eigen::MatrixXd& niche) {
  const Eigen::Index n = popular.rows() + niche.rows();
  if (popular.rows() == 0 || niche.rows() == 0) throw DataError("latent scoring needs both sets");
  Eigen::MatrixXd z(n, sae.latent_dim());
  for (Eigen::Index r = 0; r < popular.rows(); ++r) z.row(r) = sae.Encode(popular.row(r));
  for (Eigen::Index r = 0; r < niche.rows(); ++r) z.row(popular.rows() + r) = sae.Encode(niche.row(r));
  Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
  y.head(popular.rows()).setOnes();
  const Eigen::VectorXd yc = y.array() - y.mean();
  const double ys = yc.norm();
  std::vector<double> scores(static_cast<std::size_t>(sae.latent_dim()), 0.0);
  for (int j = 0; j < sae.latent_dim(); ++j) {
    const Eigen::VectorXd c = z.col(j).array() - z.col(j).mean();
    const double cs = c.norm();
    if (cs > 1e-12) scores[static_cast<std::size_t>(j)] = c.dot(yc) / (cs * ys);
  }
  return scores;
}

Eigen::RowVectorXd AblateLatents(const Eigen::Ref<const Eigen::RowVectorXd>& h, const SparseAutoencoder& sae,
                                 const std::vector<int>& latents) {
  Eigen::RowVectorXd z = sae.Encode(h);
  for (int j : latents) {
    if (j < 0 || j >= z.size()) throw ConfigError("latent index out of range");
    z(j) = 0.0;
  }
  return sae.Decode(z);
}

Eigen::RowVectorXd PopSteerApply(const Eigen::Ref<const Eigen::RowVectorXd>& h, const SparseAutoencoder& sae,
                                 const std::vector<double>& scores, double lambda, double cut) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("PopSteer lambda must lie in [0, 1]");
  if (static_cast<int>(scores.size()) != sae.latent_dim()) throw ConfigError("latent score count mismatch");
  Eigen::RowVectorXd z = sae.Encode(h);
  int k_pop = 0;
  std::vector<int> candidates;
  for (int j = 0; j < sae.latent_dim(); ++j) {
    if (scores[static_cast<std::size_t>(j)] <= cut) continue;
    ++k_pop;
    if (z(j) != 0.0) candidates.push_back(j);
  }
  const auto budget = static_cast<std::size_t>(std::ceil(lambda * k_pop - 1e-12));
  std::sort(candidates.begin(), candidates.end(), [&scores](int a, int b) {
    if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)]) {
      return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    }
    return a < b;
  });
  for (std::size_t c = 0; c < std::min(budget, candidates.size()); ++c) z(candidates[c]) = 0.0;
  return sae.Decode(z);
}

namespace {

NamedTensor ToTensor(const std::string& name, const Eigen::MatrixXd& m) {
  NamedTensor t;
  t.name = name;
  t.rows = m.rows();
  t.cols = m.cols();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.data.push_back(static_cast<float>(m(r, c)));
  }
  return t;
}

Eigen::MatrixXd FromTensor(const NamedTensor& t) {
  Eigen::MatrixXd m(t.rows, t.cols);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t.data[static_cast<std::size_t>(r * t.cols + c)];
  }
  return m;
}

}  // namespace

void SaveSae(const SparseAutoencoder& sae, const std::vector<double>& scores, const std::string& path,
             const nlohmann::json& meta) {
  Container c;
  c.kind = "sae";
  c.meta = meta.is_object() ? meta : nlohmann::json::object();
  c.meta["k"] = sae.k;
  c.tensors.push_back(ToTensor("encoder", sae.encoder));
  c.tensors.push_back(ToTensor("encoder_bias", sae.encoder_bias));
  c.tensors.push_back(ToTensor("decoder", sae.decoder));
  c.tensors.push_back(ToTensor("decoder_bias", sae.decoder_bias));
  Eigen::RowVectorXd s(static_cast<Eigen::Index>(scores.size()));
  for (std::size_t i = 0; i < scores.size(); ++i) s(static_cast<Eigen::Index>(i)) = scores[i];
  c.tensors.push_back(ToTensor("latent_scores", s));
  WriteContainer(path, c);
}

SparseAutoencoder LoadSae(const std::string& path, std::vector<double>* scores, nlohmann::json* meta) {
  const Container c = ReadContainer(path);
  if (c.kind != "sae") throw FormatError(path + ": expected an SAE, found '" + c.kind + "'");
  for (const char* name : {"encoder", "encoder_bias", "decoder", "decoder_bias", "latent_scores"}) {
    if (!c.Contains(name)) throw FormatError(path + ": missing tensor " + name);
  }
  SparseAutoencoder sae;
  sae.k = c.meta.value("k", 0);
  sae.encoder = FromTensor(c.Get("encoder"));
  sae.encoder_bias = FromTensor(c.Get("encoder_bias"));
  sae.decoder = FromTensor(c.Get("decoder"));
  sae.decoder_bias = FromTensor(c.Get("decoder_bias"));
  if (sae.decoder.rows() != sae.encoder.cols() || sae.decoder.cols() != sae.encoder.rows() ||
      sae.encoder_bias.size() != sae.encoder.cols() || sae.decoder_bias.size() != sae.encoder.rows() ||
      sae.k < 1 || sae.k > sae.latent_dim()) {
    throw FormatError(path + ": inconsistent SAE shapes");
  }
  if (scores) {
    const auto s = FromTensor(c.Get("latent_scores"));
    scores->assign(s.data(), s.data() + s.size());
  }
  if (meta) *meta = c.meta;
  return sae;
}

}  // namespace popalign::baselines
