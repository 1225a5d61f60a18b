#pragma once

// Causal transformer sequence encoder (learned positions, post-norm blocks,
// ReLU feed-forward), its two aggregation schemes, and Adam.
//
// Only the real suffix of a padded sequence is run through the blocks. With
// a causal mask and padded keys masked out, real positions never see pad
// positions, so this is exact; pad rows of the per-position output are zero.

#include "iclrec/autodiff.hpp"
#include "iclrec/data.hpp"

#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace iclrec {

struct EncoderConfig {
  int hidden = 64;       // d
  int max_len = 50;      // T
  int blocks = 2;
  int heads = 2;
  int ffn_mult = 4;
  double dropout = 0.2;
  double init_std = 0.02;
  int vocab_rows = 0;    // |V| + 2: pad, items, mask

  void validate() const {
    if (hidden < 1 || max_len < 1 || blocks < 1 || heads < 1 || ffn_mult < 1 || vocab_rows < 3)
      throw ArgumentError("encoder config: all sizes must be >= 1 and the vocabulary non-empty");
    if (hidden % heads != 0) throw ArgumentError("encoder config: hidden size must be divisible by heads");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ArgumentError("encoder config: dropout must be in [0, 1)");
  }
};

struct BlockWeights {
  Matrix query_w, query_b, key_w, key_b, value_w, value_b, output_w, output_b;
  Matrix attn_norm_g, attn_norm_b;
  Matrix ffn_in_w, ffn_in_b, ffn_out_w, ffn_out_b;
  Matrix ffn_norm_g, ffn_norm_b;
};

/// All trainable tensors. The same layout doubles as a gradient set and as
/// Adam moment storage.
struct EncoderParams {
  EncoderConfig config;
  Matrix item_embedding;      // vocab_rows × d
  Matrix position_embedding;  // T × d
  Matrix embed_norm_g, embed_norm_b;
  std::vector<BlockWeights> blocks;
};

using Gradients = EncoderParams;

namespace detail {

template <class Params, class F>
void visit_tensors(Params& p, F&& f) {
  f(std::string("item_embedding"), p.item_embedding);
  f(std::string("position_embedding"), p.position_embedding);
  f(std::string("embed_norm.gamma"), p.embed_norm_g);
  f(std::string("embed_norm.beta"), p.embed_norm_b);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    auto& b = p.blocks[i];
    const std::string pre = "block" + std::to_string(i) + ".";
    f(pre + "attn.query.weight", b.query_w);
    f(pre + "attn.query.bias", b.query_b);
    f(pre + "attn.key.weight", b.key_w);
    f(pre + "attn.key.bias", b.key_b);
    f(pre + "attn.value.weight", b.value_w);
    f(pre + "attn.value.bias", b.value_b);
    f(pre + "attn.output.weight", b.output_w);
    f(pre + "attn.output.bias", b.output_b);
    f(pre + "attn_norm.gamma", b.attn_norm_g);
    f(pre + "attn_norm.beta", b.attn_norm_b);
    f(pre + "ffn.in.weight", b.ffn_in_w);
    f(pre + "ffn.in.bias", b.ffn_in_b);
    f(pre + "ffn.out.weight", b.ffn_out_w);
    f(pre + "ffn.out.bias", b.ffn_out_b);
    f(pre + "ffn_norm.gamma", b.ffn_norm_g);
    f(pre + "ffn_norm.beta", b.ffn_norm_b);
  }
}

}  // namespace detail

/// Named tensors in checkpoint order.
inline std::vector<std::pair<std::string, Matrix*>> named_tensors(EncoderParams& p) {
  std::vector<std::pair<std::string, Matrix*>> out;
  detail::visit_tensors(p, [&](const std::string& n, Matrix& m) { out.emplace_back(n, &m); });
  return out;
}

inline std::vector<std::pair<std::string, const Matrix*>> named_tensors(const EncoderParams& p) {
  std::vector<std::pair<std::string, const Matrix*>> out;
  detail::visit_tensors(p, [&](const std::string& n, const Matrix& m) { out.emplace_back(n, &m); });
  return out;
}

/// Allocates tensors of the right shapes, all zero.
inline EncoderParams zero_params(const EncoderConfig& cfg) {
  cfg.validate();
  const Eigen::Index d = cfg.hidden;
  const Eigen::Index inner = static_cast<Eigen::Index>(cfg.hidden) * cfg.ffn_mult;
  EncoderParams p;
  p.config = cfg;
  p.item_embedding = Matrix::Zero(cfg.vocab_rows, d);
  p.position_embedding = Matrix::Zero(cfg.max_len, d);
  p.embed_norm_g = Matrix::Zero(1, d);
  p.embed_norm_b = Matrix::Zero(1, d);
  p.blocks.resize(static_cast<std::size_t>(cfg.blocks));
  for (auto& b : p.blocks) {
    for (Matrix* w : {&b.query_w, &b.key_w, &b.value_w, &b.output_w}) *w = Matrix::Zero(d, d);
    for (Matrix* v : {&b.query_b, &b.key_b, &b.value_b, &b.output_b, &b.attn_norm_g, &b.attn_norm_b, &b.ffn_out_b,
                      &b.ffn_norm_g, &b.ffn_norm_b})
      *v = Matrix::Zero(1, d);
    b.ffn_in_w = Matrix::Zero(d, inner);
    b.ffn_in_b = Matrix::Zero(1, inner);
    b.ffn_out_w = Matrix::Zero(inner, d);
  }
  return p;
}

inline EncoderParams zeros_like(const EncoderParams& p) { return zero_params(p.config); }

/// Normal(0, init_std) weights and embeddings, unit norm scales, zero biases.
inline EncoderParams init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  EncoderParams p = zero_params(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, cfg.init_std);
  for (auto& [name, m] : named_tensors(p)) {
    const bool is_gamma = name.ends_with(".gamma");
    const bool is_bias = name.ends_with(".bias") || name.ends_with(".beta");
    if (is_gamma) {
      m->setOnes();
    } else if (!is_bias) {
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = normal(rng);
    }
  }
  return p;
}

inline bool all_finite(const EncoderParams& p) {
  for (const auto& [name, m] : named_tensors(p))
    if (!m->allFinite()) return false;
  return true;
}

inline std::size_t parameter_count(const EncoderParams& p) {
  std::size_t n = 0;
  for (const auto& [name, m] : named_tensors(p)) n += static_cast<std::size_t>(m->size());
  return n;
}

enum class Mode { train, eval };

/// Builds the encoder graph for one sequence on `tape` and returns the L×d
/// hidden states of its real positions (L = seq.real_len ≥ 1). Gradients of
/// parameters accumulate into `grads` when it is non-null.
inline Var encode(Tape& tape, const EncoderParams& p, Gradients* grads, const PaddedSequence& seq, Mode mode,
                  std::uint64_t dropout_seed) {
  const EncoderConfig& cfg = p.config;
  if (seq.items.size() != static_cast<std::size_t>(cfg.max_len))
    throw ArgumentError("encode: sequence length " + std::to_string(seq.items.size()) + " differs from max_len " +
                        std::to_string(cfg.max_len));
  if (seq.real_len < 1) throw ArgumentError("encode: sequence has no real items");
  for (ItemId id : seq.items)
    if (id < 0 || id >= cfg.vocab_rows)
      throw IndexError("item id " + std::to_string(id) + " outside vocabulary of " + std::to_string(cfg.vocab_rows) +
                       " rows");

  const auto len = static_cast<Eigen::Index>(seq.real_len);
  const double rate = mode == Mode::train ? cfg.dropout : 0.0;
  std::uint64_t site = 0;
  auto drop = [&](Var x) { return ad::dropout(tape, x, rate, derive_seed(dropout_seed, {site++})); };
  auto bind = [&](const Matrix& v, Matrix* g) { return ParamRef{&v, grads != nullptr ? g : nullptr}; };
  auto gsel = [&](auto member) -> Matrix* { return grads != nullptr ? &(grads->*member) : nullptr; };

  std::vector<ItemId> ids(seq.items.end() - len, seq.items.end());
  std::vector<ItemId> positions(static_cast<std::size_t>(len));
  for (Eigen::Index i = 0; i < len; ++i) positions[static_cast<std::size_t>(i)] = static_cast<ItemId>(cfg.max_len - len + i);

  Var x = ad::add(tape, ad::gather(tape, bind(p.item_embedding, gsel(&EncoderParams::item_embedding)), std::move(ids)),
                  ad::gather(tape, bind(p.position_embedding, gsel(&EncoderParams::position_embedding)),
                             std::move(positions)));
  x = ad::layer_norm(tape, x, bind(p.embed_norm_g, gsel(&EncoderParams::embed_norm_g)),
                     bind(p.embed_norm_b, gsel(&EncoderParams::embed_norm_b)));
  x = drop(x);

  for (std::size_t bi = 0; bi < p.blocks.size(); ++bi) {
    const BlockWeights& b = p.blocks[bi];
    BlockWeights* gb = grads != nullptr ? &grads->blocks[bi] : nullptr;
    auto bw = [&](const Matrix& v, Matrix BlockWeights::*member) {
      return ParamRef{&v, gb != nullptr ? &(gb->*member) : nullptr};
    };
    Var q = ad::linear(tape, x, bw(b.query_w, &BlockWeights::query_w), bw(b.query_b, &BlockWeights::query_b));
    Var k = ad::linear(tape, x, bw(b.key_w, &BlockWeights::key_w), bw(b.key_b, &BlockWeights::key_b));
    Var v = ad::linear(tape, x, bw(b.value_w, &BlockWeights::value_w), bw(b.value_b, &BlockWeights::value_b));
    Var att = ad::causal_attention(tape, q, k, v, cfg.heads);
    att = ad::linear(tape, att, bw(b.output_w, &BlockWeights::output_w), bw(b.output_b, &BlockWeights::output_b));
    x = ad::layer_norm(tape, ad::add(tape, x, drop(att)), bw(b.attn_norm_g, &BlockWeights::attn_norm_g),
                       bw(b.attn_norm_b, &BlockWeights::attn_norm_b));
    Var f = ad::relu(tape, ad::linear(tape, x, bw(b.ffn_in_w, &BlockWeights::ffn_in_w),
                                      bw(b.ffn_in_b, &BlockWeights::ffn_in_b)));
    f = ad::linear(tape, f, bw(b.ffn_out_w, &BlockWeights::ffn_out_w), bw(b.ffn_out_b, &BlockWeights::ffn_out_b));
    x = ad::layer_norm(tape, ad::add(tape, x, drop(f)), bw(b.ffn_norm_g, &BlockWeights::ffn_norm_g),
                       bw(b.ffn_norm_b, &BlockWeights::ffn_norm_b));
  }
  return x;
}

/// Per-position states H (T×d, pad rows zero) with both aggregate forms.
struct SequenceRepresentation {
  Matrix per_position;
  std::size_t real_len = 0;
  Matrix pooled;  // 1×d, mean over real rows
  Matrix concat;  // 1×(T·d), position-major
};

inline SequenceRepresentation forward(const EncoderParams& p, const PaddedSequence& seq, Mode mode,
                                      std::uint64_t dropout_seed = 0) {
  const auto t_len = static_cast<Eigen::Index>(p.config.max_len);
  const auto d = static_cast<Eigen::Index>(p.config.hidden);
  SequenceRepresentation rep;
  rep.real_len = seq.real_len;
  rep.per_position = Matrix::Zero(t_len, d);
  if (seq.real_len > 0) {
    Tape tape;
    Var h = encode(tape, p, nullptr, seq, mode, dropout_seed);
    rep.per_position.bottomRows(static_cast<Eigen::Index>(seq.real_len)) = tape.value(h);
    rep.pooled = tape.value(h).colwise().mean();
  } else {
    if (seq.items.size() != static_cast<std::size_t>(p.config.max_len))
      throw ArgumentError("forward: sequence length differs from max_len");
    rep.pooled = Matrix::Zero(1, d);
  }
  rep.concat = Eigen::Map<const Matrix>(rep.per_position.data(), 1, t_len * d);
  return rep;
}

enum class Aggregation { mean, concat };

/// Mean over real positions, or the position-major concatenation of all rows.
inline Matrix aggregate(const SequenceRepresentation& rep, Aggregation scheme) {
  if (rep.real_len == 0) throw ArgumentError("aggregate: all-pad sequence has no representation");
  const auto rows = rep.per_position.rows();
  if (scheme == Aggregation::mean)
    return rep.per_position.bottomRows(static_cast<Eigen::Index>(rep.real_len)).colwise().mean();
  return Eigen::Map<const Matrix>(rep.per_position.data(), 1, rows * rep.per_position.cols());
}

/// ∂loss/∂params for a loss graph built by `build(tape, params, grads)`,
/// which must return a 1×1 node.
template <class BuildLoss>
Gradients gradients(const EncoderParams& p, BuildLoss&& build) {
  Gradients g = zeros_like(p);
  Tape tape;
  Var loss = build(tape, p, &g);
  if (!std::isfinite(tape.scalar(loss))) throw NumericError("gradients: non-finite loss");
  tape.backward(loss);
  return g;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  EncoderParams m;
  EncoderParams v;
  std::int64_t step = 0;
};

inline AdamState init_adam(const EncoderParams& p) { return AdamState{zeros_like(p), zeros_like(p), 0}; }

/// One bias-corrected Adam update of a single tensor at step t ≥ 1.
inline void adam_update(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, std::int64_t t,
                        const AdamConfig& cfg) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols() || m.rows() != param.rows() ||
      m.cols() != param.cols() || v.rows() != param.rows() || v.cols() != param.cols())
    throw ArgumentError("adam: shape mismatch");
  if (t < 1) throw ArgumentError("adam: step must be >= 1");
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  param.array() -= cfg.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
}

inline void adam_step(EncoderParams& p, const Gradients& g, AdamState& state, const AdamConfig& cfg) {
  auto pt = named_tensors(p);
  auto gt = named_tensors(g);
  auto mt = named_tensors(state.m);
  auto vt = named_tensors(state.v);
  if (gt.size() != pt.size() || mt.size() != pt.size() || vt.size() != pt.size())
    throw ArgumentError("adam: parameter structure mismatch");
  ++state.step;
  for (std::size_t i = 0; i < pt.size(); ++i) adam_update(*pt[i].second, *gt[i].second, *mt[i].second, *vt[i].second, state.step, cfg);
  if (!all_finite(p)) throw NumericError("adam: parameters became non-finite");
}

}  // namespace iclrec
