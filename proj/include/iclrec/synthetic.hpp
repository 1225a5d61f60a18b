#pragma once

// Synthetic intent corpus: every user belongs to one of K disjoint item
// pools and draws its sequence from that pool without replacement.

#include "iclrec/common.hpp"
#include "iclrec/data.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace iclrec {

struct SyntheticConfig {
  int users = 400;
  int intents = 4;     // K_true
  int pool_size = 25;  // items per intent pool
  int min_length = 10;
  int max_length = 20;
  /// Probability that a position is replaced by an item from another pool.
  double cross_pool_noise = 0.0;
  std::uint64_t seed = 7;

  void validate() const {
    if (users < 1 || intents < 1 || pool_size < 1) throw ArgumentError("synthetic: users, intents, pool size must be >= 1");
    if (min_length < 1 || max_length < min_length) throw ArgumentError("synthetic: need 1 <= min_length <= max_length");
    if (max_length > pool_size) throw ArgumentError("synthetic: max_length exceeds pool size (draws are without replacement)");
    if (!(cross_pool_noise >= 0.0 && cross_pool_noise < 1.0)) throw ArgumentError("synthetic: noise must lie in [0, 1)");
    if (cross_pool_noise > 0.0 && intents < 2) throw ArgumentError("synthetic: cross-pool noise needs at least two pools");
  }
};

struct SyntheticCorpus {
  /// Raw item tokens; pool p owns p*pool_size+1 .. (p+1)*pool_size.
  std::vector<std::string> user_ids;
  std::vector<std::vector<long long>> sequences;
  std::vector<int> labels;  // generating pool per user
};

/// User u is assigned pool u mod K, so pools are balanced.
inline SyntheticCorpus generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  SyntheticCorpus c;
  for (int u = 0; u < cfg.users; ++u) {
    std::mt19937_64 rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(u)}));
    const int pool = u % cfg.intents;
    const int len = std::uniform_int_distribution<int>(cfg.min_length, cfg.max_length)(rng);
    std::vector<long long> items(static_cast<std::size_t>(cfg.pool_size));
    std::iota(items.begin(), items.end(), static_cast<long long>(pool) * cfg.pool_size + 1);
    std::shuffle(items.begin(), items.end(), rng);
    items.resize(static_cast<std::size_t>(len));
    if (cfg.cross_pool_noise > 0.0) {
      std::bernoulli_distribution flip(cfg.cross_pool_noise);
      for (auto& it : items) {
        if (!flip(rng)) continue;
        int other = std::uniform_int_distribution<int>(0, cfg.intents - 2)(rng);
        if (other >= pool) ++other;
        it = static_cast<long long>(other) * cfg.pool_size + std::uniform_int_distribution<int>(1, cfg.pool_size)(rng);
      }
    }
    c.user_ids.push_back("u" + std::to_string(u + 1));
    c.sequences.push_back(std::move(items));
    c.labels.push_back(pool);
  }
  return c;
}

inline void write_synthetic(std::ostream& out, const SyntheticCorpus& c) {
  for (std::size_t u = 0; u < c.sequences.size(); ++u) {
    out << c.user_ids[u];
    for (long long it : c.sequences[u]) out << ' ' << it;
    out << '\n';
  }
}

/// "<user_id> <pool>" per line.
inline void write_synthetic_labels(std::ostream& out, const SyntheticCorpus& c) {
  for (std::size_t u = 0; u < c.sequences.size(); ++u) out << c.user_ids[u] << ' ' << c.labels[u] << '\n';
}

/// The corpus as a dataset, through the same re-indexing as file input.
inline InteractionDataset to_dataset(const SyntheticCorpus& c) {
  std::vector<std::vector<std::string>> raw;
  for (const auto& s : c.sequences) {
    raw.emplace_back();
    for (long long it : s) raw.back().push_back(std::to_string(it));
  }
  return detail::reindex(c.user_ids, raw);
}

}  // namespace iclrec
