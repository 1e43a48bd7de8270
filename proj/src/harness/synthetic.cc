#include "popalign/harness/synthetic.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "popalign/common/error.h"

namespace popalign::harness {

void SyntheticWorldSpec::Validate() const {
  if (n_users < 1 || n_items < 2) throw ConfigError("synthetic world needs >= 1 user and >= 2 items");
  if (!(popularity_exponent > 0.0)) throw ConfigError("synthetic.exponent must be > 0");
  if (sequence_length < 3) throw ConfigError("synthetic.length must be >= 3");
  if (length_jitter < 0 || sequence_length - length_jitter < 3) {
    throw ConfigError("synthetic.length_jitter leaves sequences shorter than 3");
  }
  if (!(follow_prob >= 0.0 && follow_prob <= 1.0)) throw ConfigError("synthetic.follow_prob must lie in [0, 1]");
  if (band_size < 1) throw ConfigError("synthetic.band_size must be >= 1");
  if (!(kernel_width > 0.0)) throw ConfigError("synthetic.kernel_width must be > 0");
  if (popularity_coupling < 0.0) throw ConfigError("synthetic.popularity_coupling must be >= 0");
  if (user_preference_mix.empty()) throw ConfigError("synthetic.mix is empty");
  for (const auto& c : user_preference_mix) {
    if (!(c.weight > 0.0) || c.mean < 0.0 || c.mean > 1.0 || c.stddev < 0.0 || c.drift < 0.0 || c.drift > 1.0) {
      throw ConfigError("synthetic.mix components need weight > 0, mean in [0, 1], sd >= 0, drift in [0, 1]");
    }
  }
}

std::vector<PreferenceComponent> ParsePreferenceMix(const std::string& text) {
  std::vector<PreferenceComponent> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    PreferenceComponent c;
    char sep1 = 0, sep2 = 0;
    std::stringstream ps(part);
    if (!(ps >> c.weight >> sep1 >> c.mean >> sep2 >> c.stddev) || sep1 != ':' || sep2 != ':') {
      throw ConfigError("bad preference component '" + part + "', expected weight:mean:sd[:drift]");
    }
    char sep3 = 0;
    if (ps >> sep3) {
      if (sep3 != ':' || !(ps >> c.drift)) throw ConfigError("bad drift in preference component '" + part + "'");
    }
    out.push_back(c);
  }
  if (out.empty()) throw ConfigError("empty preference mix");
  return out;
}

SyntheticWorldSpec SyntheticWorldSpec::FromKeyValue(const KeyValueConfig& cfg) {
  SyntheticWorldSpec s;
  s.n_users = static_cast<int>(cfg.GetInt("synthetic.n_users", s.n_users));
  s.n_items = static_cast<int>(cfg.GetInt("synthetic.n_items", s.n_items));
  s.popularity_exponent = cfg.GetDouble("synthetic.exponent", s.popularity_exponent);
  if (cfg.Has("synthetic.mix")) s.user_preference_mix = ParsePreferenceMix(cfg.RequireString("synthetic.mix"));
  s.sequence_length = static_cast<int>(cfg.GetInt("synthetic.length", s.sequence_length));
  s.length_jitter = static_cast<int>(cfg.GetInt("synthetic.length_jitter", s.length_jitter));
  s.follow_prob = cfg.GetDouble("synthetic.follow_prob", s.follow_prob);
  s.band_size = static_cast<int>(cfg.GetInt("synthetic.band_size", s.band_size));
  s.kernel_width = cfg.GetDouble("synthetic.kernel_width", s.kernel_width);
  s.popularity_coupling = cfg.GetDouble("synthetic.popularity_coupling", s.popularity_coupling);
  s.seed = static_cast<std::uint64_t>(cfg.GetInt("synthetic.seed", cfg.GetInt("seed", static_cast<std::int64_t>(s.seed))));
  s.Validate();
  return s;
}

double RankPercentile(int rank, int n_items) {
  return n_items <= 1 ? 1.0 : 1.0 - static_cast<double>(rank) / (n_items - 1);
}

SyntheticWorld MakeSyntheticWorld(const SyntheticWorldSpec& spec) {
  spec.Validate();
  const int n = spec.n_items;
  std::mt19937_64 rng(spec.seed);

  // rank -> item id
  std::vector<ItemId> by_rank(static_cast<std::size_t>(n));
  std::iota(by_rank.begin(), by_rank.end(), 0);
  std::shuffle(by_rank.begin(), by_rank.end(), rng);
  SyntheticWorld world;
  world.item_rank.assign(static_cast<std::size_t>(n), 0);
  for (int r = 0; r < n; ++r) world.item_rank[static_cast<std::size_t>(by_rank[static_cast<std::size_t>(r)])] = r;

  // Successor cycles over consecutive rank bands, in shuffled order.
  world.successor.assign(static_cast<std::size_t>(n), 0);
  for (int start = 0; start < n; start += spec.band_size) {
    const int end = std::min(n, start + spec.band_size);
    std::vector<ItemId> band(by_rank.begin() + start, by_rank.begin() + end);
    std::shuffle(band.begin(), band.end(), rng);
    for (std::size_t k = 0; k < band.size(); ++k) {
      world.successor[static_cast<std::size_t>(band[k])] = band[(k + 1) % band.size()];
    }
  }

  std::vector<double> log_weight(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    log_weight[static_cast<std::size_t>(r)] = -spec.popularity_exponent * spec.popularity_coupling * std::log(r + 1.0);
  }

  std::vector<double> comp_weights;
  for (const auto& c : spec.user_preference_mix) comp_weights.push_back(c.weight);
  std::discrete_distribution<int> pick_comp(comp_weights.begin(), comp_weights.end());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> jitter(-spec.length_jitter, spec.length_jitter);

  std::vector<ItemSequence> seqs;
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int u = 0; u < spec.n_users; ++u) {
    const auto& comp = spec.user_preference_mix[static_cast<std::size_t>(pick_comp(rng))];
    std::normal_distribution<double> target(comp.mean, comp.stddev);
    const double q = std::clamp(comp.stddev > 0.0 ? target(rng) : comp.mean, 0.0, 1.0);
    world.target_quantile.push_back(q);

    const int len = spec.sequence_length + (spec.length_jitter > 0 ? jitter(rng) : 0);
    std::discrete_distribution<int> jump;
    auto set_target = [&](double centre) {
      double max_lw = -1e300;
      for (int r = 0; r < n; ++r) {
        const double z = (RankPercentile(r, n) - centre) / spec.kernel_width;
        w[static_cast<std::size_t>(r)] = log_weight[static_cast<std::size_t>(r)] - 0.5 * z * z;
        max_lw = std::max(max_lw, w[static_cast<std::size_t>(r)]);
      }
      for (auto& x : w) x = std::exp(x - max_lw);
      jump = std::discrete_distribution<int>(w.begin(), w.end());
    };
    set_target(q);

    ItemSequence seq;
    seq.reserve(static_cast<std::size_t>(len));
    seq.push_back(by_rank[static_cast<std::size_t>(jump(rng))]);
    while (static_cast<int>(seq.size()) < len) {
      if (unif(rng) < spec.follow_prob) {
        seq.push_back(world.successor[static_cast<std::size_t>(seq.back())]);
      } else {
        if (comp.drift > 0.0) {
          const double frac = static_cast<double>(seq.size()) / (len - 1);
          set_target(q + comp.drift * frac * (0.5 - q));
        }
        seq.push_back(by_rank[static_cast<std::size_t>(jump(rng))]);
      }
    }
    seqs.push_back(std::move(seq));
  }
  world.log = corpus::InteractionLog::FromSequences(std::move(seqs), n);
  return world;
}

SyntheticWorld MakeMarkovWorld(int n_users, int n_items, int sequence_length, std::uint64_t seed) {
  if (n_users < 1 || n_items < 2 || sequence_length < 3) {
    throw ConfigError("Markov world needs >= 1 user, >= 2 items, length >= 3");
  }
  std::mt19937_64 rng(seed);
  std::vector<ItemId> cycle(static_cast<std::size_t>(n_items));
  std::iota(cycle.begin(), cycle.end(), 0);
  std::shuffle(cycle.begin(), cycle.end(), rng);
  SyntheticWorld world;
  world.successor.assign(static_cast<std::size_t>(n_items), 0);
  world.item_rank.assign(static_cast<std::size_t>(n_items), 0);
  for (int k = 0; k < n_items; ++k) {
    world.successor[static_cast<std::size_t>(cycle[static_cast<std::size_t>(k)])] =
        cycle[static_cast<std::size_t>((k + 1) % n_items)];
    world.item_rank[static_cast<std::size_t>(k)] = k;
  }
  std::uniform_int_distribution<ItemId> start(0, n_items - 1);
  std::vector<ItemSequence> seqs;
  for (int u = 0; u < n_users; ++u) {
    ItemSequence seq{start(rng)};
    while (static_cast<int>(seq.size()) < sequence_length) {
      seq.push_back(world.successor[static_cast<std::size_t>(seq.back())]);
    }
    seqs.push_back(std::move(seq));
    world.target_quantile.push_back(0.5);
  }
  world.log = corpus::InteractionLog::FromSequences(std::move(seqs), n_items);
  return world;
}

}  // namespace popalign::harness
