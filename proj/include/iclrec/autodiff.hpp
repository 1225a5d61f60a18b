#pragma once

// Reverse-mode differentiation over a small set of matrix primitives.
//
// A Tape records every intermediate value together with a closure that
// pushes the node's output gradient back to its inputs. Trainable tensors
// live outside the tape and enter through ParamRef, which carries an
// optional pointer to a gradient accumulator of the same shape.

#include "iclrec/common.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace iclrec {

struct ParamRef {
  const Matrix* value = nullptr;
  Matrix* grad = nullptr;  // null: no gradient wanted
};

class Tape {
 public:
  struct Var {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
  };
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  Var leaf(Matrix value) { return record(std::move(value), nullptr); }

  Var record(Matrix value, Backward back) {
    nodes_.push_back(Node{std::move(value), Matrix(), false, std::move(back)});
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  const Matrix& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  double scalar(Var v) const { return value(v)(0, 0); }

  bool has_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).has_grad; }

  /// Gradient of the last backward pass; zeros if nothing reached the node.
  Matrix grad(Var v) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    if (n.has_grad) return n.grad;
    return Matrix::Zero(n.value.rows(), n.value.cols());
  }

  template <class Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  /// Adds an output gradient to `v`; call run_backward() once all seeds are set.
  template <class Derived>
  void seed(Var v, const Eigen::MatrixBase<Derived>& g) {
    if (g.rows() != value(v).rows() || g.cols() != value(v).cols())
      throw ArgumentError("seed gradient shape does not match node");
    accumulate(v, g);
  }

  void run_backward() {
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.has_grad && n.back) n.back(*this, n.grad);
    }
  }

  /// Seeds d(out)/d(out) = 1 for a 1×1 node and propagates.
  void backward(Var out) {
    if (value(out).size() != 1) throw ArgumentError("backward() needs a scalar output");
    if (!std::isfinite(scalar(out))) throw NumericError("non-finite loss value");
    seed(out, Matrix::Ones(1, 1));
    run_backward();
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    Backward back;
  };
  std::vector<Node> nodes_;
};

using Var = Tape::Var;

namespace ad {

inline Var add(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) throw ArgumentError("add: shape mismatch");
  return t.record(av + bv, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

inline Var scale(Tape& t, Var a, double c) {
  return t.record(t.value(a) * c, [a, c](Tape& tp, const Matrix& g) { tp.accumulate(a, g * c); });
}

/// Sum of all entries, 1×1.
inline Var sum(Tape& t, Var a) {
  Matrix out(1, 1);
  out(0, 0) = t.value(a).sum();
  const auto rows = t.value(a).rows();
  const auto cols = t.value(a).cols();
  return t.record(std::move(out), [a, rows, cols](Tape& tp, const Matrix& g) {
    tp.accumulate(a, Matrix::Constant(rows, cols, g(0, 0)));
  });
}

/// Σ coeffs[i] · terms[i] over 1×1 nodes.
inline Var weighted_sum(Tape& t, std::span<const Var> terms, std::span<const double> coeffs) {
  if (terms.size() != coeffs.size()) throw ArgumentError("weighted_sum: size mismatch");
  Matrix out = Matrix::Zero(1, 1);
  for (std::size_t i = 0; i < terms.size(); ++i) out(0, 0) += coeffs[i] * t.scalar(terms[i]);
  std::vector<Var> ts(terms.begin(), terms.end());
  std::vector<double> cs(coeffs.begin(), coeffs.end());
  return t.record(std::move(out), [ts, cs](Tape& tp, const Matrix& g) {
    for (std::size_t i = 0; i < ts.size(); ++i) tp.accumulate(ts[i], g * cs[i]);
  });
}

/// Rows of `table` selected by `ids`.
inline Var gather(Tape& t, ParamRef table, std::vector<ItemId> ids) {
  const Matrix& tv = *table.value;
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= tv.rows())
      throw IndexError("embedding index " + std::to_string(ids[r]) + " outside table of " +
                       std::to_string(tv.rows()) + " rows");
    out.row(static_cast<Eigen::Index>(r)) = tv.row(ids[r]);
  }
  return t.record(std::move(out), [table, ids = std::move(ids)](Tape&, const Matrix& g) {
    if (table.grad == nullptr) return;
    for (std::size_t r = 0; r < ids.size(); ++r) table.grad->row(ids[r]) += g.row(static_cast<Eigen::Index>(r));
  });
}

/// x·W + b with W: in×out and b: 1×out.
inline Var linear(Tape& t, Var x, ParamRef w, ParamRef b) {
  const Matrix& xv = t.value(x);
  if (xv.cols() != w.value->rows()) throw ArgumentError("linear: inner dimension mismatch");
  Matrix out = xv * (*w.value);
  out.rowwise() += b.value->row(0);
  return t.record(std::move(out), [x, w, b](Tape& tp, const Matrix& g) {
    const Matrix& xin = tp.value(x);
    if (w.grad != nullptr) w.grad->noalias() += xin.transpose() * g;
    if (b.grad != nullptr) *b.grad += g.colwise().sum();
    tp.accumulate(x, g * w.value->transpose());
  });
}

/// Row-wise layer normalization with learned scale and shift (both 1×d).
inline Var layer_norm(Tape& t, Var x, ParamRef gamma, ParamRef beta, double eps = 1e-12) {
  const Matrix& xv = t.value(x);
  const auto n = xv.rows();
  const auto d = xv.cols();
  Matrix xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = xhat.array().rowwise() * gamma.value->row(0).array();
  out.rowwise() += beta.value->row(0);
  return t.record(std::move(out), [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                                       Tape& tp, const Matrix& g) {
    const auto dd = static_cast<double>(xhat.cols());
    if (gamma.grad != nullptr) *gamma.grad += (g.array() * xhat.array()).colwise().sum().matrix();
    if (beta.grad != nullptr) *beta.grad += g.colwise().sum();
    Matrix dxhat = g.array().rowwise() * gamma.value->row(0).array();
    Matrix dx(xhat.rows(), xhat.cols());
    for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
      const double s1 = dxhat.row(r).sum();
      const double s2 = dxhat.row(r).dot(xhat.row(r));
      dx.row(r) = (inv_std(r) / dd) * (dd * dxhat.row(r).array() - s1 - xhat.row(r).array() * s2);
    }
    tp.accumulate(x, dx);
  });
}

inline Var relu(Tape& t, Var x) {
  Matrix out = t.value(x).cwiseMax(0.0);
  return t.record(std::move(out), [x](Tape& tp, const Matrix& g) {
    tp.accumulate(x, (tp.value(x).array() > 0.0).select(g, 0.0));
  });
}

/// Inverted dropout. Rate 0 returns the input node unchanged.
inline Var dropout(Tape& t, Var x, double rate, std::uint64_t seed) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ArgumentError("dropout rate must be < 1");
  const Matrix& xv = t.value(x);
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale_kept = 1.0 / (1.0 - rate);
  Matrix mask(xv.rows(), xv.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale_kept : 0.0;
  Matrix out = xv.cwiseProduct(mask);
  return t.record(std::move(out), [x, mask = std::move(mask)](Tape& tp, const Matrix& g) {
    tp.accumulate(x, g.cwiseProduct(mask));
  });
}

/// Multi-head scaled dot-product attention where query i sees keys 0..i.
/// q, k, v are L×d; heads split the columns evenly.
inline Var causal_attention(Tape& t, Var q, Var k, Var v, int heads) {
  const Matrix& qv = t.value(q);
  const Matrix& kv = t.value(k);
  const Matrix& vv = t.value(v);
  const auto len = qv.rows();
  const auto d = qv.cols();
  if (heads < 1 || d % heads != 0) throw ArgumentError("causal_attention: d not divisible by heads");
  const auto dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Matrix> probs(static_cast<std::size_t>(heads));
  Matrix out(len, d);
  for (int h = 0; h < heads; ++h) {
    Matrix s = qv.middleCols(h * dh, dh) * kv.middleCols(h * dh, dh).transpose() * inv_sqrt;
    Matrix& p = probs[static_cast<std::size_t>(h)];
    p = Matrix::Zero(len, len);
    for (Eigen::Index i = 0; i < len; ++i) {
      const double mx = s.row(i).head(i + 1).maxCoeff();
      double z = 0.0;
      for (Eigen::Index j = 0; j <= i; ++j) {
        p(i, j) = std::exp(s(i, j) - mx);
        z += p(i, j);
      }
      p.row(i).head(i + 1) /= z;
    }
    out.middleCols(h * dh, dh) = p * vv.middleCols(h * dh, dh);
  }
  return t.record(std::move(out), [q, k, v, heads, dh, inv_sqrt, probs = std::move(probs)](
                                      Tape& tp, const Matrix& g) {
    const Matrix& qv2 = tp.value(q);
    const Matrix& kv2 = tp.value(k);
    const Matrix& vv2 = tp.value(v);
    Matrix dq(qv2.rows(), qv2.cols());
    Matrix dk(kv2.rows(), kv2.cols());
    Matrix dv(vv2.rows(), vv2.cols());
    for (int h = 0; h < heads; ++h) {
      const Matrix& p = probs[static_cast<std::size_t>(h)];
      const auto go = g.middleCols(h * dh, dh);
      Matrix dp = go * vv2.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = p.transpose() * go;
      Matrix ds(p.rows(), p.cols());
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const double inner = p.row(i).dot(dp.row(i));
        ds.row(i) = p.row(i).array() * (dp.row(i).array() - inner);
      }
      ds *= inv_sqrt;
      dq.middleCols(h * dh, dh) = ds * kv2.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = ds.transpose() * qv2.middleCols(h * dh, dh);
    }
    tp.accumulate(q, dq);
    tp.accumulate(k, dk);
    tp.accumulate(v, dv);
  });
}

/// Column means over rows, 1×d.
inline Var mean_rows(Tape& t, Var x) {
  const Matrix& xv = t.value(x);
  if (xv.rows() == 0) throw ArgumentError("mean_rows: no rows");
  Matrix out = xv.colwise().mean();
  const auto n = xv.rows();
  return t.record(std::move(out), [x, n](Tape& tp, const Matrix& g) {
    tp.accumulate(x, g.replicate(n, 1) / static_cast<double>(n));
  });
}

/// Lays the L×d input into the last L row slots of a total_rows×d block of
/// zeros and flattens position-major into 1×(total_rows·d).
inline Var flatten_padded(Tape& t, Var x, Eigen::Index total_rows) {
  const Matrix& xv = t.value(x);
  const auto len = xv.rows();
  const auto d = xv.cols();
  if (len > total_rows) throw ArgumentError("flatten_padded: more rows than slots");
  Matrix out = Matrix::Zero(1, total_rows * d);
  const auto offset = (total_rows - len) * d;
  out.rightCols(len * d) = Eigen::Map<const Matrix>(xv.data(), 1, len * d);
  return t.record(std::move(out), [x, len, d, offset](Tape& tp, const Matrix& g) {
    Matrix dx = Eigen::Map<const Matrix>(g.data() + offset, len, d);
    tp.accumulate(x, dx);
  });
}

/// Stacks row blocks vertically.
inline Var stack_rows(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw ArgumentError("stack_rows: nothing to stack");
  const auto cols = t.value(parts[0]).cols();
  Eigen::Index rows = 0;
  for (Var p : parts) {
    if (t.value(p).cols() != cols) throw ArgumentError("stack_rows: column mismatch");
    rows += t.value(p).rows();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (Var p : parts) {
    offsets.push_back(at);
    out.middleRows(at, t.value(p).rows()) = t.value(p);
    at += t.value(p).rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.record(std::move(out), [ps, offsets](Tape& tp, const Matrix& g) {
    for (std::size_t i = 0; i < ps.size(); ++i)
      tp.accumulate(ps[i], g.middleRows(offsets[i], tp.value(ps[i]).rows()));
  });
}

/// Divides each row by its L2 norm.
inline Var normalize_rows(Tape& t, Var x, double eps = 1e-12) {
  const Matrix& xv = t.value(x);
  Eigen::VectorXd norms = xv.rowwise().norm().array().max(eps);
  Matrix out = xv.array().colwise() / norms.array();
  return t.record(out, [x, norms, y = out](Tape& tp, const Matrix& g) {
    Eigen::VectorXd inner = (g.array() * y.array()).rowwise().sum();
    Matrix dx = g - (y.array().colwise() * inner.array()).matrix();
    dx.array().colwise() /= norms.array();
    tp.accumulate(x, dx);
  });
}

/// a·bᵀ.
inline Var matmul_nt(Tape& t, Var a, Var b) {
  if (t.value(a).cols() != t.value(b).cols()) throw ArgumentError("matmul_nt: inner dimension mismatch");
  Matrix out = t.value(a) * t.value(b).transpose();
  return t.record(std::move(out), [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g * tp.value(b));
    tp.accumulate(b, g.transpose() * tp.value(a));
  });
}

/// Elementwise log σ(x), stable for large |x|.
inline Var log_sigmoid(Tape& t, Var x) {
  Matrix out = t.value(x).unaryExpr([](double z) { return std::min(z, 0.0) - std::log1p(std::exp(-std::abs(z))); });
  return t.record(std::move(out), [x](Tape& tp, const Matrix& g) {
    Matrix sig_neg = tp.value(x).unaryExpr([](double z) {
      // σ(-z)
      return z >= 0 ? std::exp(-z) / (1.0 + std::exp(-z)) : 1.0 / (1.0 + std::exp(z));
    });
    tp.accumulate(x, g.cwiseProduct(sig_neg));
  });
}

/// n×1 column of dot products h[rows[i]] · table[items[i]].
inline Var row_item_dots(Tape& t, Var h, ParamRef table, std::vector<Eigen::Index> rows,
                         std::vector<ItemId> items) {
  if (rows.size() != items.size()) throw ArgumentError("row_item_dots: size mismatch");
  const Matrix& hv = t.value(h);
  const Matrix& tv = *table.value;
  Matrix out(static_cast<Eigen::Index>(rows.size()), 1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (items[i] < 0 || items[i] >= tv.rows()) throw IndexError("item id outside embedding table");
    out(static_cast<Eigen::Index>(i), 0) = hv.row(rows[i]).dot(tv.row(items[i]));
  }
  return t.record(std::move(out), [h, table, rows = std::move(rows), items = std::move(items)](
                                      Tape& tp, const Matrix& g) {
    const Matrix& hin = tp.value(h);
    Matrix dh = Matrix::Zero(hin.rows(), hin.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double gi = g(static_cast<Eigen::Index>(i), 0);
      dh.row(rows[i]) += gi * table.value->row(items[i]);
      if (table.grad != nullptr) table.grad->row(items[i]) += gi * hin.row(rows[i]);
    }
    tp.accumulate(h, dh);
  });
}

/// Σ_i [ logsumexp_{j : allowed(i,j)} s_ij − s_{i,positive[i]} ] as a 1×1 node.
/// The positive column of each row must be allowed.
inline Var info_nce(Tape& t, Var scores, std::vector<Eigen::Index> positive,
                    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> allowed) {
  const Matrix& s = t.value(scores);
  if (static_cast<Eigen::Index>(positive.size()) != s.rows() || allowed.rows() != s.rows() ||
      allowed.cols() != s.cols())
    throw ArgumentError("info_nce: shape mismatch");
  Matrix soft = Matrix::Zero(s.rows(), s.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const Eigen::Index pos = positive[static_cast<std::size_t>(i)];
    if (pos < 0 || pos >= s.cols() || !allowed(i, pos)) throw ArgumentError("info_nce: positive must be allowed");
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < s.cols(); ++j)
      if (allowed(i, j)) mx = std::max(mx, s(i, j));
    double z = 0.0;
    for (Eigen::Index j = 0; j < s.cols(); ++j)
      if (allowed(i, j)) {
        soft(i, j) = std::exp(s(i, j) - mx);
        z += soft(i, j);
      }
    soft.row(i) /= z;
    total += mx + std::log(z) - s(i, pos);
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  return t.record(std::move(out), [scores, positive = std::move(positive), soft = std::move(soft)](
                                      Tape& tp, const Matrix& g) {
    Matrix ds = soft;
    for (Eigen::Index i = 0; i < ds.rows(); ++i) ds(i, positive[static_cast<std::size_t>(i)]) -= 1.0;
    tp.accumulate(scores, ds * g(0, 0));
  });
}

}  // namespace ad
}  // namespace iclrec
