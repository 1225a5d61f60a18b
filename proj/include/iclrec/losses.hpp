#pragma once

// Training objectives: sampled next-item BCE, sequence-level InfoNCE between
// two augmented views, and intent InfoNCE against cluster prototypes with
// false-negative mitigation. Each has a graph-building form used in training
// and a plain-value form for direct evaluation.

#include "iclrec/autodiff.hpp"

#include <random>
#include <unordered_set>
#include <vector>

namespace iclrec {

struct LossWeights {
  double lambda = 0.0;  // intent contrastive strength
  double beta = 0.0;    // sequence contrastive strength

  void validate() const {
    if (!(lambda >= 0.0) || !(beta >= 0.0)) throw ArgumentError("loss weights must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Next-item prediction

namespace ad {

/// −Σ_t [log σ(h_{t−1}·e(target_t)) + log σ(−h_{t−1}·e(neg_t))] over a
/// sequence whose L×d states are `hidden`. targets/negatives have L−1
/// entries; position t (1-based, t ≥ 2) is predicted from row t−2. Pad
/// targets contribute nothing.
inline Var next_item_loss(Tape& t, Var hidden, ParamRef item_table, const std::vector<ItemId>& targets,
                          const std::vector<ItemId>& negatives) {
  if (targets.size() != negatives.size()) throw ArgumentError("next_item_loss: target/negative count mismatch");
  if (static_cast<Eigen::Index>(targets.size()) >= t.value(hidden).rows() + 1)
    throw ArgumentError("next_item_loss: more targets than predicting rows");
  std::vector<Eigen::Index> rows;
  std::vector<ItemId> pos, neg;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == kPadId) continue;
    rows.push_back(static_cast<Eigen::Index>(i));
    pos.push_back(targets[i]);
    neg.push_back(negatives[i]);
  }
  if (rows.empty()) return t.leaf(Matrix::Zero(1, 1));
  Var ps = row_item_dots(t, hidden, item_table, rows, std::move(pos));
  Var ns = row_item_dots(t, hidden, item_table, std::move(rows), std::move(neg));
  Var lp = sum(t, log_sigmoid(t, ps));
  Var ln = sum(t, log_sigmoid(t, scale(t, ns, -1.0)));
  return scale(t, add(t, lp, ln), -1.0);
}

}  // namespace ad

/// −log σ(h·pos) − log(1 − σ(h·neg)) for 1×d row vectors.
inline double next_item_loss(const Matrix& h, const Matrix& pos, const Matrix& neg) {
  Tape t;
  Var hv = t.leaf(h);
  Var a = ad::matmul_nt(t, hv, t.leaf(pos));
  Var b = ad::matmul_nt(t, hv, t.leaf(neg));
  Var l = ad::scale(t, ad::add(t, ad::log_sigmoid(t, a), ad::log_sigmoid(t, ad::scale(t, b, -1.0))), -1.0);
  return t.scalar(l);
}

/// Uniform draw from [1, vocab_size] \ history.
template <class Rng>
ItemId sample_negative(const std::unordered_set<ItemId>& history, std::int32_t vocab_size, Rng& rng) {
  std::size_t in_vocab = 0;
  for (ItemId i : history)
    if (i >= 1 && i <= vocab_size) ++in_vocab;
  if (in_vocab >= static_cast<std::size_t>(vocab_size))
    throw DataError("sample_negative: history covers the whole vocabulary");
  std::uniform_int_distribution<ItemId> pick(1, vocab_size);
  // Rejection is fast unless the history covers most of the vocabulary.
  for (int attempt = 0; attempt < 64; ++attempt) {
    const ItemId c = pick(rng);
    if (!history.contains(c)) return c;
  }
  std::vector<ItemId> free;
  for (ItemId i = 1; i <= vocab_size; ++i)
    if (!history.contains(i)) free.push_back(i);
  return free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
}

inline ItemId sample_negative(const std::unordered_set<ItemId>& history, std::int32_t vocab_size,
                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_negative(history, vocab_size, rng);
}

// ---------------------------------------------------------------------------
// Sequence-level contrastive loss

namespace ad {

/// Symmetric InfoNCE over N view pairs (rows of view1/view2, each N×D):
/// for every view the positive is its sibling and the denominator runs over
/// all 2N−1 other views. Similarity is the dot product divided by
/// `temperature`. Returns the sum over users and both directions.
inline Var seqcl_loss(Tape& t, Var view1, Var view2, double temperature = 1.0) {
  const auto n = t.value(view1).rows();
  if (n < 2) throw ArgumentError("seqcl_loss: needs at least two sequences in the batch");
  if (t.value(view2).rows() != n) throw ArgumentError("seqcl_loss: view batches differ in size");
  if (!(temperature > 0.0)) throw ArgumentError("seqcl_loss: temperature must be > 0");
  const Var parts[] = {view1, view2};
  Var z = stack_rows(t, parts);
  Var s = matmul_nt(t, z, z);
  if (temperature != 1.0) s = scale(t, s, 1.0 / temperature);
  const auto m = 2 * n;
  std::vector<Eigen::Index> positive(static_cast<std::size_t>(m));
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> allowed =
      Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Constant(m, m, true);
  for (Eigen::Index i = 0; i < m; ++i) {
    positive[static_cast<std::size_t>(i)] = i < n ? i + n : i - n;
    allowed(i, i) = false;
  }
  return info_nce(t, s, std::move(positive), std::move(allowed));
}

/// Intent contrastive loss. `views` holds one N×d matrix of pooled
/// representations per augmented view; `centroids` is K×d (constant).
/// Representations and prototypes are L2-normalized before the dot product.
/// For user u the positive is c_{a(u)}; the denominator sums over the batch
/// users' prototypes c_{a(v)}. With `fnm`, users v ≠ u sharing u's intent
/// are left out of the denominator. Returns the sum over users and views.
inline Var icl_loss(Tape& t, std::span<const Var> views, const std::vector<int>& assignments,
                    const Matrix& centroids, bool fnm = true, double temperature = 1.0) {
  if (views.empty()) throw ArgumentError("icl_loss: no views");
  if (!(temperature > 0.0)) throw ArgumentError("icl_loss: temperature must be > 0");
  const auto n = static_cast<Eigen::Index>(assignments.size());
  Matrix batch_protos(n, centroids.cols());
  for (Eigen::Index u = 0; u < n; ++u) {
    const int a = assignments[static_cast<std::size_t>(u)];
    if (a < 0 || a >= centroids.rows()) throw StateError("icl_loss: user has no valid intent assignment");
    batch_protos.row(u) = centroids.row(a);
  }
  const double eps = 1e-12;
  batch_protos.array().colwise() /= batch_protos.rowwise().norm().array().max(eps);
  Var protos = t.leaf(std::move(batch_protos));

  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> allowed(n, n);
  for (Eigen::Index u = 0; u < n; ++u)
    for (Eigen::Index v = 0; v < n; ++v)
      allowed(u, v) = !fnm || u == v || assignments[static_cast<std::size_t>(u)] != assignments[static_cast<std::size_t>(v)];
  std::vector<Eigen::Index> positive(static_cast<std::size_t>(n));
  for (Eigen::Index u = 0; u < n; ++u) positive[static_cast<std::size_t>(u)] = u;

  std::vector<Var> terms;
  for (Var view : views) {
    if (t.value(view).rows() != n || t.value(view).cols() != centroids.cols())
      throw ArgumentError("icl_loss: view shape does not match assignments/centroids");
    Var s = matmul_nt(t, normalize_rows(t, view, eps), protos);
    if (temperature != 1.0) s = scale(t, s, 1.0 / temperature);
    terms.push_back(info_nce(t, s, positive, allowed));
  }
  std::vector<double> ones(terms.size(), 1.0);
  return weighted_sum(t, terms, ones);
}

}  // namespace ad

inline double seqcl_loss(const Matrix& view1, const Matrix& view2, double temperature = 1.0) {
  Tape t;
  return t.scalar(ad::seqcl_loss(t, t.leaf(view1), t.leaf(view2), temperature));
}

inline double icl_loss(const std::vector<Matrix>& views, const std::vector<int>& assignments,
                       const Matrix& centroids, bool fnm = true, double temperature = 1.0) {
  Tape t;
  std::vector<Var> vs;
  for (const auto& v : views) vs.push_back(t.leaf(v));
  return t.scalar(ad::icl_loss(t, vs, assignments, centroids, fnm, temperature));
}

/// L_next + λ·L_icl + β·L_seqcl.
inline double multi_task_loss(double next_item, double icl, double seqcl, const LossWeights& w) {
  return next_item + w.lambda * icl + w.beta * seqcl;
}

}  // namespace iclrec
