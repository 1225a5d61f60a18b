#pragma once

// Interaction logs: loading, 5-core filtering, leave-one-out splits,
// fixed-length left padding and the robustness-harness transformations.

#include "iclrec/common.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace iclrec {

/// Per-user chronological item sequences over a dense vocabulary 1..vocab_size.
struct InteractionDataset {
  std::vector<std::string> user_ids;
  std::vector<std::vector<ItemId>> sequences;
  /// raw_item_ids[id] is the token the item had in the source file; [0] is unused.
  std::vector<std::string> raw_item_ids{""};
  std::int32_t vocab_size = 0;

  ItemId pad_id() const { return kPadId; }
  ItemId mask_id() const { return vocab_size + 1; }
  std::size_t num_users() const { return sequences.size(); }
  std::size_t num_actions() const {
    std::size_t n = 0;
    for (const auto& s : sequences) n += s.size();
    return n;
  }
  double average_length() const {
    return sequences.empty() ? 0.0 : static_cast<double>(num_actions()) / static_cast<double>(sequences.size());
  }
};

struct UserSplit {
  std::size_t user = 0;  // index into the source dataset
  std::vector<ItemId> train;
  ItemId valid_target = kPadId;
  ItemId test_target = kPadId;
  /// Replaces train+[valid] as the test-phase input when set (noise injection).
  std::optional<std::vector<ItemId>> test_input_override;

  std::vector<ItemId> valid_input() const { return train; }
  std::vector<ItemId> test_input() const {
    if (test_input_override) return *test_input_override;
    std::vector<ItemId> in = train;
    in.push_back(valid_target);
    return in;
  }
  std::size_t full_length() const { return train.size() + 2; }
};

struct SplitDataset {
  std::vector<UserSplit> users;
  std::vector<std::string> user_ids;  // parallel to users
  std::int32_t vocab_size = 0;

  ItemId mask_id() const { return vocab_size + 1; }
};

/// Exactly T item ids; pads occupy a prefix.
struct PaddedSequence {
  std::vector<ItemId> items;
  std::size_t real_len = 0;

  std::size_t max_len() const { return items.size(); }
};

namespace detail {

/// Re-indexes items to 1..n in order of first appearance and drops empty users.
inline InteractionDataset reindex(const std::vector<std::string>& users,
                                  const std::vector<std::vector<std::string>>& raw_sequences) {
  InteractionDataset ds;
  std::unordered_map<std::string, ItemId> ids;
  for (std::size_t u = 0; u < raw_sequences.size(); ++u) {
    if (raw_sequences[u].empty()) continue;
    std::vector<ItemId> seq;
    seq.reserve(raw_sequences[u].size());
    for (const auto& tok : raw_sequences[u]) {
      auto [it, inserted] = ids.try_emplace(tok, static_cast<ItemId>(ds.raw_item_ids.size()));
      if (inserted) ds.raw_item_ids.push_back(tok);
      seq.push_back(it->second);
    }
    ds.user_ids.push_back(users[u]);
    ds.sequences.push_back(std::move(seq));
  }
  ds.vocab_size = static_cast<std::int32_t>(ds.raw_item_ids.size() - 1);
  return ds;
}

inline bool positive_integer(const std::string& tok) {
  if (tok.empty() || tok.size() > 18) return false;
  if (!std::all_of(tok.begin(), tok.end(), [](unsigned char c) { return std::isdigit(c) != 0; })) return false;
  return std::stoll(tok) > 0;
}

}  // namespace detail

/// Parses "<user_id> <item_id_1> ... <item_id_k>" lines. Blank lines are skipped.
inline InteractionDataset parse_interactions(std::istream& in) {
  std::vector<std::string> users;
  std::vector<std::vector<std::string>> raw;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string user;
    if (!(fields >> user)) continue;
    std::vector<std::string> items;
    for (std::string tok; fields >> tok;) {
      if (!detail::positive_integer(tok))
        throw ParseError("line " + std::to_string(line_no) + ": item id '" + tok + "' is not a positive integer");
      items.push_back(std::to_string(std::stoll(tok)));
    }
    if (items.empty()) throw ParseError("line " + std::to_string(line_no) + ": user '" + user + "' has no items");
    users.push_back(std::move(user));
    raw.push_back(std::move(items));
  }
  if (users.empty()) throw DataError("empty dataset: no interaction lines");
  return detail::reindex(users, raw);
}

inline InteractionDataset load_interactions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open interaction file '" + path + "'");
  return parse_interactions(in);
}

inline void write_interactions(std::ostream& out, const InteractionDataset& ds) {
  for (std::size_t u = 0; u < ds.num_users(); ++u) {
    out << ds.user_ids[u];
    for (ItemId id : ds.sequences[u]) out << ' ' << ds.raw_item_ids[static_cast<std::size_t>(id)];
    out << '\n';
  }
}

/// Repeatedly drops users and items with fewer than `min_count` interactions
/// until nothing changes, then re-indexes the survivors densely.
inline InteractionDataset five_core_filter(const InteractionDataset& ds, std::size_t min_count = 5) {
  std::vector<std::vector<ItemId>> seqs = ds.sequences;
  std::vector<bool> user_alive(seqs.size(), true);
  for (bool changed = true; changed;) {
    changed = false;
    std::vector<std::size_t> item_count(static_cast<std::size_t>(ds.vocab_size) + 2, 0);
    for (std::size_t u = 0; u < seqs.size(); ++u)
      if (user_alive[u])
        for (ItemId i : seqs[u]) ++item_count[static_cast<std::size_t>(i)];
    for (std::size_t u = 0; u < seqs.size(); ++u) {
      if (!user_alive[u]) continue;
      auto& s = seqs[u];
      const auto before = s.size();
      std::erase_if(s, [&](ItemId i) { return item_count[static_cast<std::size_t>(i)] < min_count; });
      if (s.size() != before) changed = true;
    }
    for (std::size_t u = 0; u < seqs.size(); ++u) {
      if (user_alive[u] && seqs[u].size() < min_count) {
        user_alive[u] = false;
        changed = true;
      }
    }
  }
  if (seqs == ds.sequences && std::all_of(user_alive.begin(), user_alive.end(), [](bool a) { return a; }))
    return ds;
  std::vector<std::string> users;
  std::vector<std::vector<std::string>> raw;
  for (std::size_t u = 0; u < seqs.size(); ++u) {
    if (!user_alive[u]) continue;
    users.push_back(ds.user_ids[u]);
    std::vector<std::string> toks;
    for (ItemId i : seqs[u]) toks.push_back(ds.raw_item_ids[static_cast<std::size_t>(i)]);
    raw.push_back(std::move(toks));
  }
  return detail::reindex(users, raw);
}

/// Last item → test, second-to-last → valid, the rest → train. Users with
/// fewer than three items are dropped.
inline SplitDataset split_leave_one_out(const InteractionDataset& ds) {
  SplitDataset out;
  out.vocab_size = ds.vocab_size;
  for (std::size_t u = 0; u < ds.num_users(); ++u) {
    const auto& s = ds.sequences[u];
    if (s.size() < 3) continue;
    UserSplit us;
    us.user = u;
    us.train.assign(s.begin(), s.end() - 2);
    us.valid_target = s[s.size() - 2];
    us.test_target = s.back();
    out.users.push_back(std::move(us));
    out.user_ids.push_back(ds.user_ids[u]);
  }
  return out;
}

/// Keeps the most recent `max_len` items and left-pads with kPadId.
inline PaddedSequence pad_truncate(const std::vector<ItemId>& seq, std::size_t max_len) {
  if (max_len < 1) throw ArgumentError("pad_truncate: max_len must be >= 1");
  PaddedSequence p;
  p.real_len = std::min(seq.size(), max_len);
  p.items.assign(max_len, kPadId);
  std::copy(seq.end() - static_cast<std::ptrdiff_t>(p.real_len), seq.end(),
            p.items.end() - static_cast<std::ptrdiff_t>(p.real_len));
  return p;
}

/// Inserts ceil(ratio·len) items the user never interacted with into every
/// test-phase input, each at a uniformly drawn slot. Training data is untouched.
inline SplitDataset inject_test_noise(const SplitDataset& split, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ArgumentError("noise ratio must be in [0, 1]");
  SplitDataset out = split;
  if (ratio == 0.0) return out;
  for (std::size_t u = 0; u < out.users.size(); ++u) {
    UserSplit& us = out.users[u];
    std::vector<ItemId> input = us.test_input();
    std::unordered_set<ItemId> history(us.train.begin(), us.train.end());
    history.insert(us.valid_target);
    history.insert(us.test_target);
    std::vector<ItemId> candidates;
    for (ItemId i = 1; i <= out.vocab_size; ++i)
      if (!history.contains(i)) candidates.push_back(i);
    if (candidates.empty()) continue;
    const auto n_noise = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(input.size()) - 1e-9));
    std::mt19937_64 rng(derive_seed(seed, {u}));
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    for (std::size_t k = 0; k < n_noise; ++k) {
      const ItemId item = candidates[pick(rng)];
      std::uniform_int_distribution<std::size_t> slot(0, input.size());
      input.insert(input.begin() + static_cast<std::ptrdiff_t>(slot(rng)), item);
    }
    us.test_input_override = std::move(input);
  }
  return out;
}

/// Sorts indices by length (stable) and cuts them into n_groups contiguous
/// buckets whose sizes differ by at most one, larger buckets first.
inline std::vector<std::vector<std::size_t>> partition_by_length(const std::vector<std::size_t>& lengths,
                                                                 std::size_t n_groups) {
  if (n_groups < 1) throw ArgumentError("n_groups must be >= 1");
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
  std::vector<std::vector<std::size_t>> groups(n_groups);
  const std::size_t base = lengths.size() / n_groups;
  const std::size_t extra = lengths.size() % n_groups;
  std::size_t at = 0;
  for (std::size_t g = 0; g < n_groups; ++g) {
    const std::size_t size = base + (g < extra ? 1 : 0);
    groups[g].assign(order.begin() + static_cast<std::ptrdiff_t>(at),
                     order.begin() + static_cast<std::ptrdiff_t>(at + size));
    std::sort(groups[g].begin(), groups[g].end());
    at += size;
  }
  return groups;
}

/// Splits users into n_groups equal-count buckets of increasing sequence length.
/// Groups keep the parent vocabulary.
inline std::vector<InteractionDataset> group_by_length(const InteractionDataset& ds, std::size_t n_groups) {
  std::vector<std::size_t> lengths;
  for (const auto& s : ds.sequences) lengths.push_back(s.size());
  std::vector<InteractionDataset> out;
  for (const auto& members : partition_by_length(lengths, n_groups)) {
    InteractionDataset g;
    g.raw_item_ids = ds.raw_item_ids;
    g.vocab_size = ds.vocab_size;
    for (std::size_t u : members) {
      g.user_ids.push_back(ds.user_ids[u]);
      g.sequences.push_back(ds.sequences[u]);
    }
    out.push_back(std::move(g));
  }
  return out;
}

inline SplitDataset subset(const SplitDataset& split, const std::vector<std::size_t>& members) {
  SplitDataset out;
  out.vocab_size = split.vocab_size;
  for (std::size_t i : members) {
    out.users.push_back(split.users.at(i));
    out.user_ids.push_back(split.user_ids.at(i));
  }
  return out;
}

}  // namespace iclrec
