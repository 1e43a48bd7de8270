#include <algorithm>
#include <cmath>

#include "popalign/common/error.h"
#include "popalign/spree/spree.h"

namespace popalign::spree {

ActivationBank CaptureActivations(const ModelParams<float>& params,
                                  const std::vector<ItemSequence>& sequences,
                                  const std::vector<int>& positions) {
  const auto& cfg = params.config;
  if (sequences.empty()) throw DataError("no sequences to capture");
  ActivationBank bank;
  bank.levels = cfg.num_blocks + 1;
  bank.positions = cfg.max_len;
  bank.dim = cfg.dim;
  bank.count = static_cast<std::int64_t>(sequences.size());
  bank.cells.resize(static_cast<std::size_t>(bank.levels) * bank.positions);

  std::vector<char> wanted(static_cast<std::size_t>(cfg.max_len), positions.empty() ? 1 : 0);
  for (int t : positions) {
    if (t < 0 || t >= cfg.max_len) throw ConfigError("probe position outside 0..T-1");
    wanted[static_cast<std::size_t>(t)] = 1;
  }
  for (const auto& seq : sequences) {
    if (static_cast<int>(seq.size()) != cfg.max_len) {
      throw DataError("capture sequence length differs from model max_len");
    }
    for (int t = 0; t < cfg.max_len; ++t) {
      if (seq[static_cast<std::size_t>(t)] == kPadItem) wanted[static_cast<std::size_t>(t)] = 0;
    }
  }
  for (int l = 0; l < bank.levels; ++l) {
    for (int t = 0; t < bank.positions; ++t) {
      if (wanted[static_cast<std::size_t>(t)]) {
        bank.cells[static_cast<std::size_t>(l) * bank.positions + t].resize(bank.count, cfg.dim);
      }
    }
  }
  for (std::int64_t n = 0; n < bank.count; ++n) {
    const auto fwd = seqrec::Forward(params, sequences[static_cast<std::size_t>(n)], true);
    for (int l = 0; l < bank.levels; ++l) {
      for (int t = 0; t < bank.positions; ++t) {
        if (!wanted[static_cast<std::size_t>(t)]) continue;
        bank.cells[static_cast<std::size_t>(l) * bank.positions + t].row(n) =
            fwd.trace->levels[static_cast<std::size_t>(l)].row(t);
      }
    }
  }
  return bank;
}

std::vector<Eigen::RowVectorXd> MeanActivations(const ActivationBank& bank) {
  std::vector<Eigen::RowVectorXd> out(bank.cells.size());
  for (std::size_t c = 0; c < bank.cells.size(); ++c) {
    const auto& m = bank.cells[c];
    if (m.rows() == 0) continue;
    out[c] = m.cast<double>().colwise().sum() / static_cast<double>(m.rows());
  }
  return out;
}

MeanActivationPair CaptureMeanActivations(const ModelParams<float>& params, const ContrastiveSets& sets,
                                          const std::vector<int>& positions) {
  MeanActivationPair pair;
  pair.positions = params.config.max_len;
  pair.plus = MeanActivations(CaptureActivations(params, sets.d_plus, positions));
  pair.minus = MeanActivations(CaptureActivations(params, sets.d_minus, positions));
  return pair;
}

Eigen::RowVectorXd SteeringVectorFrom(const Eigen::RowVectorXd& x_plus, const Eigen::RowVectorXd& x_minus) {
  if (x_plus.size() != x_minus.size() || x_plus.size() == 0) {
    throw ConfigError("mean activations must be non-empty vectors of equal size");
  }
  const Eigen::RowVectorXd diff = x_minus - x_plus;
  const double norm = diff.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw NumericError("degenerate steering direction: mean activations coincide");
  }
  return diff / norm;
}

Eigen::RowVectorXd SiteActivation(const ModelParams<float>& params, std::span<const ItemId> history,
                                  const Site& site) {
  const auto seq = seqrec::PadSequence(history, params.config.max_len);
  const auto fwd = seqrec::Forward(params, seq, true);
  return fwd.trace->levels.at(static_cast<std::size_t>(site.level)).row(site.position).cast<double>();
}

}  // namespace popalign::spree
