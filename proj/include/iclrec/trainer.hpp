#pragma once

// Generalized-EM training: each epoch clusters all training sequences into
// intents (E-step) and then takes one Adam step per mini-batch on
// L_next + λ·L_icl + β·L_seqcl (M-step).
//
// Randomness is split into independent streams derived from the master seed:
//   stream_seed(master, SeedStream::X, epoch, user, view)
// init (0,0,0), shuffle (epoch), kmeans (epoch; 0 for the final fit),
// augment (epoch, user), negative (epoch, user), dropout (epoch, user, view)
// with view 0 for the original sequence and 1, 2 for the augmented views.
// `user` is the index into the split's user list.

#include "iclrec/augment.hpp"
#include "iclrec/clustering.hpp"
#include "iclrec/data.hpp"
#include "iclrec/encoder.hpp"
#include "iclrec/eval.hpp"
#include "iclrec/losses.hpp"

#include <chrono>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

namespace iclrec {

enum class SeedStream : std::uint64_t { init = 1, shuffle = 2, kmeans = 3, augment = 4, negative = 5, dropout = 6 };

inline std::uint64_t stream_seed(std::uint64_t master, SeedStream stream, std::uint64_t epoch = 0, std::uint64_t user = 0,
                                 std::uint64_t view = 0) {
  return derive_seed(master, {static_cast<std::uint64_t>(stream), epoch, user, view});
}

struct TrainConfig {
  int batch_size = 256;
  AdamConfig adam;
  int max_epochs = 200;
  int patience = 10;
  int k = 256;
  LossWeights weights{0.5, 0.1};
  double temperature = 1.0;
  bool fnm = true;
  AugmentConfig augment;
  int kmeans_iters = 20;
  std::uint64_t seed = 2022;
  bool exclude_seen = true;
  bool validate_each_epoch = true;

  void validate() const {
    if (batch_size < 1 || max_epochs < 1 || patience < 1 || k < 1 || kmeans_iters < 1)
      throw ArgumentError("train config: batch size, epochs, patience, K and k-means iterations must be >= 1");
    if (!(adam.lr >= 0.0) || !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) ||
        !(adam.eps > 0.0))
      throw ArgumentError("train config: invalid optimizer settings");
    if (!(temperature > 0.0)) throw ArgumentError("train config: temperature must be > 0");
    weights.validate();
    augment.validate();
  }
};

/// Human-readable name of the objective mix.
inline std::string run_label(const LossWeights& w) {
  if (w.lambda == 0.0 && w.beta == 0.0) return "next-item only";
  if (w.lambda == 0.0) return "next-item + seqcl";
  if (w.beta == 0.0) return "next-item + icl";
  return "next-item + icl + seqcl";
}

/// Per-user training inputs, index-aligned with the split's users.
struct TrainingSet {
  std::vector<std::vector<ItemId>> items;  // most recent max_len training items
  std::vector<PaddedSequence> padded;
  std::vector<std::unordered_set<ItemId>> history;  // all training items
  std::int32_t vocab_size = 0;
  std::size_t max_len = 0;

  std::size_t size() const { return items.size(); }
  ItemId mask_id() const { return vocab_size + 1; }
};

inline TrainingSet make_training_set(const SplitDataset& split, std::size_t max_len) {
  TrainingSet ts;
  ts.vocab_size = split.vocab_size;
  ts.max_len = max_len;
  for (const UserSplit& us : split.users) {
    PaddedSequence p = pad_truncate(us.train, max_len);
    ts.items.emplace_back(p.items.end() - static_cast<std::ptrdiff_t>(p.real_len), p.items.end());
    ts.padded.push_back(std::move(p));
    ts.history.emplace_back(us.train.begin(), us.train.end());
  }
  return ts;
}

/// Next-item targets of a training sequence: item t+1 for row t.
inline std::vector<ItemId> next_item_targets(const std::vector<ItemId>& items) {
  if (items.size() < 2) return {};
  return {items.begin() + 1, items.end()};
}

inline std::vector<ItemId> sample_negatives(const std::unordered_set<ItemId>& history, std::int32_t vocab_size,
                                            std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ItemId> out(count);
  for (auto& v : out) v = sample_negative(history, vocab_size, rng);
  return out;
}

/// Shuffled user order for one epoch.
inline std::vector<std::size_t> epoch_order(std::size_t n_users, std::uint64_t master, int epoch) {
  std::vector<std::size_t> order(n_users);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(stream_seed(master, SeedStream::shuffle, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

struct TrainState {
  EncoderParams params;
  AdamState adam;
  Gradients grads;
};

inline TrainState init_train_state(const EncoderConfig& enc, std::uint64_t master) {
  TrainState st;
  st.params = init_encoder(enc, stream_seed(master, SeedStream::init));
  st.adam = init_adam(st.params);
  st.grads = zeros_like(st.params);
  return st;
}

inline void zero_gradients(Gradients& g) {
  for (auto& [name, m] : named_tensors(g)) m->setZero();
}

struct BatchLosses {
  double total = 0.0;
  double next_item = 0.0;
  double icl = 0.0;
  double seqcl = 0.0;
};

namespace detail {

inline void require_finite(double v, const char* component, int epoch) {
  if (!std::isfinite(v))
    throw NumericError(std::string("non-finite ") + component + " loss in epoch " + std::to_string(epoch));
}

}  // namespace detail

/// Accumulates the batch gradient of the multi-task loss into st.grads and
/// applies one Adam step. Each component is summed over positions/views and
/// averaged over the batch users. `intents` may be null when λ = 0.
inline BatchLosses train_batch(TrainState& st, const TrainingSet& data, std::span<const std::size_t> users,
                               const IntentModel* intents, const TrainConfig& cfg, int epoch) {
  const std::size_t n = users.size();
  if (n == 0) throw ArgumentError("train_batch: empty batch");
  const auto ep = static_cast<std::uint64_t>(epoch);
  const bool use_icl = cfg.weights.lambda > 0.0;
  const bool use_seqcl = cfg.weights.beta > 0.0 && n >= 2;
  const bool use_views = use_icl || use_seqcl;
  if (use_icl && intents == nullptr) throw StateError("train_batch: λ > 0 needs an intent model");
  const EncoderParams& params = st.params;
  const auto t_len = static_cast<Eigen::Index>(data.max_len);
  zero_gradients(st.grads);

  BatchLosses out;
  std::vector<PaddedSequence> view1, view2;
  Matrix pooled_grad[2], concat_grad[2];
  if (use_views) {
    const auto d = static_cast<Eigen::Index>(params.config.hidden);
    Matrix pooled[2] = {Matrix(n, d), Matrix(n, d)};
    Matrix concat[2] = {Matrix(n, t_len * d), Matrix(n, t_len * d)};
    std::vector<int> batch_assign;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t u = users[i];
      auto [a, b] = sample_view_pair(data.items[u], stream_seed(cfg.seed, SeedStream::augment, ep, u), data.mask_id(),
                                     cfg.augment);
      view1.push_back(pad_truncate(a, data.max_len));
      view2.push_back(pad_truncate(b, data.max_len));
      for (int v = 0; v < 2; ++v) {
        const SequenceRepresentation rep =
            forward(params, v == 0 ? view1.back() : view2.back(), Mode::train,
                    stream_seed(cfg.seed, SeedStream::dropout, ep, u, static_cast<std::uint64_t>(v + 1)));
        pooled[v].row(static_cast<Eigen::Index>(i)) = rep.pooled;
        concat[v].row(static_cast<Eigen::Index>(i)) = rep.concat;
      }
      if (use_icl) batch_assign.push_back(intents->assignments.at(u));
    }
    Tape lt;
    Var p[2] = {lt.leaf(pooled[0]), lt.leaf(pooled[1])};
    Var c[2] = {lt.leaf(concat[0]), lt.leaf(concat[1])};
    std::vector<Var> terms;
    std::vector<double> coeffs;
    const double inv_n = 1.0 / static_cast<double>(n);
    if (use_icl) {
      Var icl = ad::icl_loss(lt, p, batch_assign, intents->centroids, cfg.fnm, cfg.temperature);
      out.icl = lt.scalar(icl) * inv_n;
      detail::require_finite(out.icl, "ICL", epoch);
      terms.push_back(icl);
      coeffs.push_back(cfg.weights.lambda * inv_n);
    }
    if (use_seqcl) {
      Var seqcl = ad::seqcl_loss(lt, c[0], c[1], cfg.temperature);
      out.seqcl = lt.scalar(seqcl) * inv_n;
      detail::require_finite(out.seqcl, "SeqCL", epoch);
      terms.push_back(seqcl);
      coeffs.push_back(cfg.weights.beta * inv_n);
    }
    lt.backward(ad::weighted_sum(lt, terms, coeffs));
    for (int v = 0; v < 2; ++v) {
      pooled_grad[v] = lt.grad(p[v]);
      concat_grad[v] = lt.grad(c[v]);
    }
  }

  double next_sum = 0.0;
  const ParamRef table{&params.item_embedding, &st.grads.item_embedding};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t u = users[i];
    {
      Tape t;
      Var h = encode(t, params, &st.grads, data.padded[u], Mode::train, stream_seed(cfg.seed, SeedStream::dropout, ep, u, 0));
      const std::vector<ItemId> targets = next_item_targets(data.items[u]);
      const std::vector<ItemId> negatives = sample_negatives(data.history[u], data.vocab_size, targets.size(),
                                                             stream_seed(cfg.seed, SeedStream::negative, ep, u));
      Var l = ad::next_item_loss(t, h, table, targets, negatives);
      next_sum += t.scalar(l);
      t.seed(l, Matrix::Constant(1, 1, 1.0 / static_cast<double>(n)));
      t.run_backward();
    }
    if (!use_views) continue;
    for (int v = 0; v < 2; ++v) {
      Tape t;
      Var h = encode(t, params, &st.grads, v == 0 ? view1[i] : view2[i], Mode::train,
                     stream_seed(cfg.seed, SeedStream::dropout, ep, u, static_cast<std::uint64_t>(v + 1)));
      if (use_icl) t.seed(ad::mean_rows(t, h), pooled_grad[v].row(static_cast<Eigen::Index>(i)));
      if (use_seqcl) t.seed(ad::flatten_padded(t, h, t_len), concat_grad[v].row(static_cast<Eigen::Index>(i)));
      t.run_backward();
    }
  }
  out.next_item = next_sum / static_cast<double>(n);
  detail::require_finite(out.next_item, "next-item", epoch);
  out.total = multi_task_loss(out.next_item, out.icl, out.seqcl, cfg.weights);
  detail::require_finite(out.total, "multi-task", epoch);
  adam_step(st.params, st.grads, st.adam, cfg.adam);
  return out;
}

struct EpochLosses {
  double total = 0.0;
  double next_item = 0.0;
  double icl = 0.0;
  double seqcl = 0.0;
  std::size_t batches = 0;
};

/// One pass over the shuffled training users, one Adam step per batch.
/// Reported losses are means over batches.
inline EpochLosses epoch_mstep(TrainState& st, const TrainingSet& data, const IntentModel* intents,
                               const TrainConfig& cfg, int epoch) {
  const std::vector<std::size_t> order = epoch_order(data.size(), cfg.seed, epoch);
  EpochLosses e;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t len = std::min(bs, order.size() - start);
    const BatchLosses b = train_batch(st, data, std::span<const std::size_t>(order).subspan(start, len), intents, cfg, epoch);
    e.total += b.total;
    e.next_item += b.next_item;
    e.icl += b.icl;
    e.seqcl += b.seqcl;
    ++e.batches;
  }
  if (e.batches > 0) {
    const double nb = static_cast<double>(e.batches);
    e.total /= nb;
    e.next_item /= nb;
    e.icl /= nb;
    e.seqcl /= nb;
  }
  return e;
}

struct EpochRecord {
  int epoch = 0;
  EpochLosses losses;
  std::optional<EvalResult> valid;
  std::optional<double> distortion;
  double estep_seconds = 0.0;
  double mstep_seconds = 0.0;
  double eval_seconds = 0.0;
};

struct TrainReport {
  std::string run_label;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  std::optional<EvalResult> best_valid;
  EvalResult test;
};

struct TrainResult {
  EncoderParams params;
  AdamState adam;
  IntentModel intents;
  TrainReport report;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Runs the EM loop with early stopping on validation NDCG@20 and returns
/// the best-validation parameters, a fresh intent model fitted with them,
/// and the per-epoch report including the final test evaluation.
inline TrainResult train(const SplitDataset& split, EncoderConfig enc, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  if (split.users.empty()) throw DataError("train: no users with at least three interactions");
  cfg.validate();
  enc.vocab_rows = split.vocab_size + 2;
  enc.validate();
  if (static_cast<std::size_t>(cfg.k) > split.users.size())
    throw ArgumentError("train: K=" + std::to_string(cfg.k) + " exceeds the " + std::to_string(split.users.size()) +
                        " training sequences");
  using Clock = std::chrono::steady_clock;
  auto seconds_since = [](Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); };

  const TrainingSet data = make_training_set(split, static_cast<std::size_t>(enc.max_len));
  const EvalOptions eval_opts{cfg.exclude_seen, default_cutoffs()};
  TrainState st = init_train_state(enc, cfg.seed);

  TrainResult result;
  result.report.run_label = run_label(cfg.weights);
  result.params = st.params;
  result.adam = st.adam;
  double best_ndcg = -1.0;
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    std::optional<IntentModel> intents;
    auto t0 = Clock::now();
    if (cfg.weights.lambda > 0.0) {
      intents = estep(st.params, data.padded, cfg.k, stream_seed(cfg.seed, SeedStream::kmeans, static_cast<std::uint64_t>(epoch)),
                      cfg.kmeans_iters);
      rec.distortion = intents->distortion;
    }
    rec.estep_seconds = seconds_since(t0);

    t0 = Clock::now();
    rec.losses = epoch_mstep(st, data, intents ? &*intents : nullptr, cfg, epoch);
    rec.mstep_seconds = seconds_since(t0);

    if (cfg.validate_each_epoch) {
      t0 = Clock::now();
      rec.valid = evaluate(st.params, split, Phase::valid, eval_opts);
      rec.eval_seconds = seconds_since(t0);
      const double ndcg = rec.valid->ndcg.at(20);
      if (ndcg > best_ndcg) {
        best_ndcg = ndcg;
        since_best = 0;
        result.report.best_epoch = epoch;
        result.report.best_valid = rec.valid;
        result.params = st.params;
        result.adam = st.adam;
      } else {
        ++since_best;
      }
    } else {
      result.report.best_epoch = epoch;
      result.params = st.params;
      result.adam = st.adam;
    }
    result.report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (cfg.validate_each_epoch && since_best >= cfg.patience) break;
  }

  result.intents = estep(result.params, data.padded, cfg.k, stream_seed(cfg.seed, SeedStream::kmeans, 0), cfg.kmeans_iters);
  result.report.test = evaluate(result.params, split, Phase::test, eval_opts);
  return result;
}

}  // namespace iclrec
