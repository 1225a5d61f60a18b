#pragma once

// Oracles shared by the unit tests and the acceptance binary. Everything
// here is written independently of the library code it checks.

#include "iclrec/iclrec.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace iclrec::testing {

inline double rel_err(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

/// Largest relative error between analytic input gradients of `build` and
/// central differences. The scalar objective is Σ out ⊙ R for a fixed
/// random R, so every output entry is exercised.
inline double op_gradient_error(std::vector<Matrix> inputs,
                                const std::function<Var(Tape&, const std::vector<Var>&)>& build, double h = 1e-4,
                                std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Matrix weights;
  auto objective = [&](const std::vector<Matrix>& in, std::vector<Matrix>* grads) {
    Tape t;
    std::vector<Var> vars;
    for (const auto& m : in) vars.push_back(t.leaf(m));
    Var out = build(t, vars);
    if (weights.size() == 0) weights = random_matrix(t.value(out).rows(), t.value(out).cols(), rng);
    const double f = (t.value(out).array() * weights.array()).sum();
    if (grads != nullptr) {
      t.seed(out, weights);
      t.run_backward();
      for (Var v : vars) grads->push_back(t.grad(v));
    }
    return f;
  };
  std::vector<Matrix> analytic;
  objective(inputs, &analytic);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double keep = inputs[k].data()[i];
      inputs[k].data()[i] = keep + h;
      const double fp = objective(inputs, nullptr);
      inputs[k].data()[i] = keep - h;
      const double fm = objective(inputs, nullptr);
      inputs[k].data()[i] = keep;
      worst = std::max(worst, rel_err(analytic[k].data()[i], (fp - fm) / (2.0 * h)));
    }
  return worst;
}

struct ParamFdResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t checked = 0;
};

/// Central-difference check of every parameter entry.
inline ParamFdResult param_gradient_error(EncoderParams params, const Gradients& analytic,
                                          const std::function<double(const EncoderParams&)>& loss, double h = 1e-4) {
  ParamFdResult r;
  auto pt = named_tensors(params);
  const auto gt = named_tensors(analytic);
  for (std::size_t k = 0; k < pt.size(); ++k) {
    Matrix& m = *pt[k].second;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double keep = m.data()[i];
      m.data()[i] = keep + h;
      const double fp = loss(params);
      m.data()[i] = keep - h;
      const double fm = loss(params);
      m.data()[i] = keep;
      const double e = rel_err(gt[k].second->data()[i], (fp - fm) / (2.0 * h));
      if (e > r.max_rel_error) {
        r.max_rel_error = e;
        r.worst_tensor = pt[k].first;
      }
      ++r.checked;
    }
  }
  return r;
}

/// Tiny encoder used by the gradient checks. The larger init scale keeps
/// pre-activations away from the ReLU kink relative to the FD step.
inline EncoderParams tiny_encoder(std::uint64_t seed, double init_std = 0.3) {
  EncoderConfig c;
  c.hidden = 8;
  c.max_len = 6;
  c.blocks = 1;
  c.heads = 2;
  c.ffn_mult = 4;
  c.dropout = 0.1;
  c.init_std = init_std;
  c.vocab_rows = 22;  // |V| = 20
  EncoderParams p = init_encoder(c, seed);
  // Non-trivial LayerNorm affine parameters so their gradients matter.
  std::mt19937_64 rng(seed + 1);
  p.embed_norm_g += random_matrix(1, 8, rng, 0.2);
  p.embed_norm_b += random_matrix(1, 8, rng, 0.2);
  for (auto& b : p.blocks) {
    b.attn_norm_g += random_matrix(1, 8, rng, 0.2);
    b.ffn_norm_b += random_matrix(1, 8, rng, 0.2);
    b.ffn_in_b += random_matrix(1, 32, rng, 0.2);
  }
  return p;
}

enum class FdLoss { next_item, seqcl, icl };

/// Builds one of the three losses over a fixed three-user batch on the tiny
/// encoder (train mode, fixed dropout seeds) and checks every parameter
/// gradient against central differences.
inline ParamFdResult loss_gradient_check(FdLoss which, std::uint64_t seed) {
  const EncoderParams p = tiny_encoder(seed);
  const std::vector<std::vector<ItemId>> seqs{{3, 7, 1, 9, 12}, {2, 2, 5, 18}, {20, 4, 6, 11, 13, 8}};
  std::vector<PaddedSequence> a, b;
  std::vector<std::vector<ItemId>> targets, negatives;
  for (const auto& s : seqs) {
    a.push_back(pad_truncate(s, 6));
    std::vector<ItemId> v(s.begin() + 1, s.end());
    v.push_back(21);  // mask id
    b.push_back(pad_truncate(v, 6));
    targets.emplace_back(s.begin() + 1, s.end());
    std::vector<ItemId> neg;
    for (std::size_t i = 1; i < s.size(); ++i) neg.push_back(static_cast<ItemId>(1 + (s[i] * 7) % 20));
    negatives.push_back(neg);
  }
  std::mt19937_64 rng(seed + 7);
  const Matrix centroids = random_matrix(2, 8, rng);
  const std::vector<int> assign{0, 1, 0};

  auto build = [&](Tape& t, const EncoderParams& q, Gradients* g) -> Var {
    if (which == FdLoss::next_item) {
      std::vector<Var> terms;
      for (std::size_t u = 0; u < a.size(); ++u) {
        Var h = encode(t, q, g, a[u], Mode::train, 100 + u);
        terms.push_back(ad::next_item_loss(t, h, ParamRef{&q.item_embedding, g ? &g->item_embedding : nullptr},
                                           targets[u], negatives[u]));
      }
      return ad::weighted_sum(t, terms, std::vector<double>(terms.size(), 1.0 / 3.0));
    }
    std::vector<Var> v1, v2;
    for (std::size_t u = 0; u < a.size(); ++u) {
      Var h1 = encode(t, q, g, a[u], Mode::train, 200 + u);
      Var h2 = encode(t, q, g, b[u], Mode::train, 300 + u);
      if (which == FdLoss::seqcl) {
        v1.push_back(ad::flatten_padded(t, h1, 6));
        v2.push_back(ad::flatten_padded(t, h2, 6));
      } else {
        v1.push_back(ad::mean_rows(t, h1));
        v2.push_back(ad::mean_rows(t, h2));
      }
    }
    const Var views[] = {ad::stack_rows(t, v1), ad::stack_rows(t, v2)};
    if (which == FdLoss::seqcl) return ad::seqcl_loss(t, views[0], views[1]);
    return ad::icl_loss(t, views, assign, centroids, true);
  };
  const Gradients g = gradients(p, build);
  return param_gradient_error(p, g, [&](const EncoderParams& q) {
    Tape t;
    return t.scalar(build(t, q, nullptr));
  });
}

// ---------------------------------------------------------------------------
// Data oracles

/// Repeatedly deletes the first offending user or item interaction set until
/// nothing changes. Returns per-user surviving sequences in raw ids.
inline std::vector<std::vector<ItemId>> brute_force_k_core(std::vector<std::vector<ItemId>> seqs, std::size_t k) {
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t u = 0; u < seqs.size(); ++u)
      if (!seqs[u].empty() && seqs[u].size() < k) {
        seqs[u].clear();
        changed = true;
      }
    std::map<ItemId, std::size_t> count;
    for (const auto& s : seqs)
      for (ItemId i : s) ++count[i];
    for (auto& s : seqs) {
      const auto before = s.size();
      s.erase(std::remove_if(s.begin(), s.end(), [&](ItemId i) { return count[i] < k; }), s.end());
      if (s.size() != before) changed = true;
    }
  }
  return seqs;
}

// ---------------------------------------------------------------------------
// Ranking oracle

/// Sorts candidate items by score descending with the target placed after
/// every item it ties with, then reads off the target's position.
inline std::size_t sort_rank(const std::vector<double>& scores, ItemId target, const std::set<ItemId>& exclude) {
  std::vector<std::pair<double, int>> c;  // (score, is_target)
  for (std::size_t i = 1; i < scores.size(); ++i) {
    const auto id = static_cast<ItemId>(i);
    if (exclude.count(id) != 0) continue;
    c.emplace_back(scores[i], id == target ? 1 : 0);
  }
  std::sort(c.begin(), c.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t r = 0; r < c.size(); ++r)
    if (c[r].second == 1) return r + 1;
  return 0;
}

// ---------------------------------------------------------------------------
// Next-item-only reference trainer: one Adam step per batch on the mean over
// users of the summed BCE next-item loss, with the trainer's seed streams.

struct ReferenceTrainer {
  EncoderParams params;
  AdamState adam;
  AdamConfig adam_cfg;
  std::uint64_t seed = 0;

  void step(const TrainingSet& data, const std::vector<std::size_t>& users, int epoch) {
    Gradients g = zeros_like(params);
    const auto ep = static_cast<std::uint64_t>(epoch);
    for (std::size_t u : users) {
      Tape t;
      Var h = encode(t, params, &g, data.padded[u], Mode::train,
                     stream_seed(seed, SeedStream::dropout, ep, u, 0));
      const std::vector<ItemId>& items = data.items[u];
      std::vector<ItemId> targets(items.begin() + 1, items.end());
      std::mt19937_64 rng(stream_seed(seed, SeedStream::negative, ep, u));
      std::vector<ItemId> negatives;
      for (std::size_t i = 0; i < targets.size(); ++i) negatives.push_back(sample_negative(data.history[u], data.vocab_size, rng));
      Var l = ad::next_item_loss(t, h, ParamRef{&params.item_embedding, &g.item_embedding}, targets, negatives);
      t.seed(l, Matrix::Constant(1, 1, 1.0 / static_cast<double>(users.size())));
      t.run_backward();
    }
    adam_step(params, g, adam, adam_cfg);
  }
};

inline bool bitwise_equal(const EncoderParams& a, const EncoderParams& b) {
  const auto ta = named_tensors(a);
  const auto tb = named_tensors(b);
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    const Matrix& x = *ta[i].second;
    const Matrix& y = *tb[i].second;
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    if (std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())) != 0) return false;
  }
  return true;
}

/// A small SplitDataset built directly from item lists (ids already dense).
inline SplitDataset make_split(const std::vector<std::vector<ItemId>>& seqs, std::int32_t vocab) {
  InteractionDataset ds;
  for (std::size_t u = 0; u < seqs.size(); ++u) {
    ds.user_ids.push_back("u" + std::to_string(u + 1));
    ds.sequences.push_back(seqs[u]);
  }
  ds.vocab_size = vocab;
  return split_leave_one_out(ds);
}

}  // namespace iclrec::testing
