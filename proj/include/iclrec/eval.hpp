#pragma once

// Full-ranking evaluation (HR@k, NDCG@k over every item) and the robustness
// report: test-time noise sweep and sequence-length groups.

#include "iclrec/data.hpp"
#include "iclrec/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <unordered_set>
#include <vector>

namespace iclrec {

inline const std::vector<int>& default_cutoffs() {
  static const std::vector<int> ks{5, 20};
  return ks;
}

struct EvalResult {
  std::map<int, double> hr;
  std::map<int, double> ndcg;
  std::size_t n_users = 0;
};

/// 1-based rank of `target` among items 1..scores.size()−1 (index 0 is
/// ignored), skipping `exclude`. Items tying the target count against it.
inline std::size_t rank_from_scores(std::span<const double> scores, ItemId target,
                                    const std::unordered_set<ItemId>& exclude) {
  if (target < 1 || static_cast<std::size_t>(target) >= scores.size()) throw ArgumentError("rank: target outside item range");
  if (exclude.contains(target)) throw ArgumentError("rank: target is in the exclusion set");
  const double ts = scores[static_cast<std::size_t>(target)];
  std::size_t higher = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (static_cast<ItemId>(i) == target || exclude.contains(static_cast<ItemId>(i))) continue;
    if (scores[i] >= ts) ++higher;
  }
  return higher + 1;
}

/// Scores every real item (rows 1..|V| of the table, pad and mask rows are
/// never ranked) by h·e(item) and ranks the target.
inline std::size_t rank_target(const Matrix& h_last, const Matrix& item_table, std::int32_t vocab_size, ItemId target,
                               const std::unordered_set<ItemId>& exclude) {
  if (item_table.rows() < vocab_size + 1) throw ArgumentError("rank_target: table smaller than vocabulary");
  Eigen::VectorXd s = item_table.topRows(vocab_size + 1) * h_last.row(0).transpose();
  return rank_from_scores(std::span<const double>(s.data(), static_cast<std::size_t>(s.size())), target, exclude);
}

inline double hr_at_k(std::size_t rank, int k) {
  if (rank < 1 || k < 1) throw ArgumentError("hr_at_k: rank and k must be >= 1");
  return rank <= static_cast<std::size_t>(k) ? 1.0 : 0.0;
}

inline double ndcg_at_k(std::size_t rank, int k) {
  if (rank < 1 || k < 1) throw ArgumentError("ndcg_at_k: rank and k must be >= 1");
  return rank <= static_cast<std::size_t>(k) ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

enum class Phase { valid, test };

struct EvalOptions {
  bool exclude_seen = true;
  std::vector<int> cutoffs = default_cutoffs();
};

/// Rank of each user's phase target given the last-position state of its
/// phase input.
inline std::vector<std::size_t> user_ranks(const EncoderParams& params, const SplitDataset& data, Phase phase,
                                           const EvalOptions& opts = {}) {
  std::vector<std::size_t> ranks;
  ranks.reserve(data.users.size());
  const auto t_len = static_cast<std::size_t>(params.config.max_len);
  for (const UserSplit& us : data.users) {
    const std::vector<ItemId> input = phase == Phase::valid ? us.valid_input() : us.test_input();
    const ItemId target = phase == Phase::valid ? us.valid_target : us.test_target;
    if (input.empty()) throw ArgumentError("evaluate: user with empty input sequence");
    Tape tape;
    Var h = encode(tape, params, nullptr, pad_truncate(input, t_len), Mode::eval, 0);
    const Matrix& hv = tape.value(h);
    std::unordered_set<ItemId> exclude;
    if (opts.exclude_seen) {
      exclude.insert(input.begin(), input.end());
      exclude.erase(target);  // a repeat interaction is still a valid target
      exclude.erase(data.mask_id());
    }
    ranks.push_back(rank_target(hv.bottomRows(1), params.item_embedding, data.vocab_size, target, exclude));
  }
  return ranks;
}

inline EvalResult summarize_ranks(const std::vector<std::size_t>& ranks, const std::vector<int>& cutoffs) {
  EvalResult r;
  r.n_users = ranks.size();
  for (int k : cutoffs) {
    double hr = 0.0, nd = 0.0;
    for (std::size_t rank : ranks) {
      hr += hr_at_k(rank, k);
      nd += ndcg_at_k(rank, k);
    }
    r.hr[k] = hr / static_cast<double>(ranks.size());
    r.ndcg[k] = nd / static_cast<double>(ranks.size());
  }
  return r;
}

/// Average HR@k / NDCG@k over users for the validation or test target.
inline EvalResult evaluate(const EncoderParams& params, const SplitDataset& data, Phase phase,
                           const EvalOptions& opts = {}) {
  if (data.users.empty()) throw ArgumentError("evaluate: no users to evaluate");
  return summarize_ranks(user_ranks(params, data, phase, opts), opts.cutoffs);
}

inline double drop_rate(double base, double noisy) { return base == 0.0 ? 0.0 : (base - noisy) / base; }

struct NoiseRow {
  double ratio = 0.0;
  EvalResult result;
  double ndcg5_drop = 0.0;
};

struct GroupRow {
  std::size_t group = 0;
  std::size_t min_length = 0;
  std::size_t max_length = 0;
  EvalResult result;
};

struct RobustnessReport {
  EvalResult clean;
  std::vector<NoiseRow> noise;
  std::vector<GroupRow> groups;
};

/// Test-phase evaluation under each noise ratio (with NDCG@5 drop rate
/// relative to the clean run) and per length group. n_groups = 0 skips groups.
inline RobustnessReport robustness_report(const EncoderParams& params, const SplitDataset& data,
                                          const std::vector<double>& ratios, std::size_t n_groups, std::uint64_t seed,
                                          const EvalOptions& opts = {}) {
  RobustnessReport rep;
  rep.clean = evaluate(params, data, Phase::test, opts);
  const double base = rep.clean.ndcg.count(5) ? rep.clean.ndcg.at(5) : 0.0;
  for (double r : ratios) {
    NoiseRow row;
    row.ratio = r;
    row.result = r == 0.0 ? rep.clean : evaluate(params, inject_test_noise(data, r, seed), Phase::test, opts);
    row.ndcg5_drop = drop_rate(base, row.result.ndcg.count(5) ? row.result.ndcg.at(5) : 0.0);
    rep.noise.push_back(std::move(row));
  }
  if (n_groups > 0) {
    std::vector<std::size_t> lengths;
    for (const auto& us : data.users) lengths.push_back(us.full_length());
    const auto groups = partition_by_length(lengths, n_groups);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (groups[g].empty()) continue;
      GroupRow row;
      row.group = g + 1;
      row.min_length = lengths[groups[g].front()];
      row.max_length = row.min_length;
      for (std::size_t u : groups[g]) {
        row.min_length = std::min(row.min_length, lengths[u]);
        row.max_length = std::max(row.max_length, lengths[u]);
      }
      row.result = evaluate(params, subset(data, groups[g]), Phase::test, opts);
      rep.groups.push_back(std::move(row));
    }
  }
  return rep;
}

}  // namespace iclrec
