#pragma once

// Intent prototypes: k-means over pooled sequence representations and the
// one-hot assignment of each sequence to its nearest prototype.

#include "iclrec/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

namespace iclrec {

struct IntentModel {
  Matrix centroids;              // K×d
  std::vector<int> assignments;  // per fitted point
  double distortion = 0.0;       // Σ squared distance to assigned centroid
  std::uint64_t seed = 0;
  std::vector<double> distortion_history;  // one entry per assignment pass

  int k() const { return static_cast<int>(centroids.rows()); }
  std::vector<std::size_t> cluster_sizes() const {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(k()), 0);
    for (int a : assignments) ++sizes[static_cast<std::size_t>(a)];
    return sizes;
  }
};

struct Assignment {
  int index = 0;
  Matrix centroid;  // 1×d
};

namespace detail {

/// Nearest centroid by squared distance, ties to the lowest index.
inline std::pair<int, double> nearest(const Matrix& centroids, const Eigen::Ref<const Matrix>& point) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double dist = (centroids.row(c) - point).squaredNorm();
    if (dist < best_d) {
      best_d = dist;
      best = static_cast<int>(c);
    }
  }
  return {best, best_d};
}

/// k-means++ seeding: first centre uniform, the rest by D² sampling.
inline Matrix kmeanspp_init(const Matrix& points, int k, std::mt19937_64& rng) {
  const auto n = points.rows();
  Matrix centroids(k, points.cols());
  std::vector<bool> chosen(static_cast<std::size_t>(n), false);
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  Eigen::Index pick = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
  for (int c = 0; c < k; ++c) {
    if (c > 0) {
      const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
      if (total > 0.0) {
        double r = std::uniform_real_distribution<double>(0.0, total)(rng);
        pick = n - 1;
        for (Eigen::Index i = 0; i < n; ++i) {
          r -= d2[static_cast<std::size_t>(i)];
          if (r < 0.0 && d2[static_cast<std::size_t>(i)] > 0.0) {
            pick = i;
            break;
          }
        }
        while (chosen[static_cast<std::size_t>(pick)] && pick > 0) --pick;
      } else {
        // Every remaining point coincides with a centre: take an unused index.
        std::vector<Eigen::Index> unused;
        for (Eigen::Index i = 0; i < n; ++i)
          if (!chosen[static_cast<std::size_t>(i)]) unused.push_back(i);
        pick = unused[std::uniform_int_distribution<std::size_t>(0, unused.size() - 1)(rng)];
      }
    }
    chosen[static_cast<std::size_t>(pick)] = true;
    centroids.row(c) = points.row(pick);
    for (Eigen::Index i = 0; i < n; ++i)
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], (points.row(i) - points.row(pick)).squaredNorm());
  }
  return centroids;
}

}  // namespace detail

/// Lloyd's algorithm from a k-means++ start. Stops when assignments stop
/// changing or after max_iter assignment passes. An empty cluster takes the
/// point farthest from its current centroid.
inline IntentModel kmeans_fit(const Matrix& points, int k, int max_iter, std::uint64_t seed) {
  const auto n = points.rows();
  if (n < 1) throw ArgumentError("kmeans_fit: no points");
  if (k < 1) throw ArgumentError("kmeans_fit: K must be >= 1");
  if (k > n) throw ArgumentError("kmeans_fit: K=" + std::to_string(k) + " exceeds the " + std::to_string(n) + " points");
  if (max_iter < 1) throw ArgumentError("kmeans_fit: max_iter must be >= 1");
  if (!points.allFinite()) throw NumericError("kmeans_fit: non-finite point");

  IntentModel model;
  model.seed = seed;
  std::mt19937_64 rng(seed);
  model.centroids = detail::kmeanspp_init(points, k, rng);

  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  std::vector<double> dist(static_cast<std::size_t>(n), 0.0);
  for (int iter = 0; iter < max_iter; ++iter) {
    std::vector<int> next(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      auto [c, d] = detail::nearest(model.centroids, points.row(i));
      next[static_cast<std::size_t>(i)] = c;
      dist[static_cast<std::size_t>(i)] = d;
    }
    // Empty-cluster repair.
    std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
    for (int c : next) ++sizes[static_cast<std::size_t>(c)];
    for (int c = 0; c < k; ++c) {
      if (sizes[static_cast<std::size_t>(c)] > 0) continue;
      Eigen::Index far = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (sizes[static_cast<std::size_t>(next[static_cast<std::size_t>(i)])] < 2) continue;
        if (far < 0 || dist[static_cast<std::size_t>(i)] > dist[static_cast<std::size_t>(far)]) far = i;
      }
      if (far < 0) break;
      --sizes[static_cast<std::size_t>(next[static_cast<std::size_t>(far)])];
      next[static_cast<std::size_t>(far)] = c;
      sizes[static_cast<std::size_t>(c)] = 1;
      dist[static_cast<std::size_t>(far)] = 0.0;
      model.centroids.row(c) = points.row(far);
    }
    model.distortion_history.push_back(std::accumulate(dist.begin(), dist.end(), 0.0));
    if (next == assign) break;
    assign = std::move(next);
    // Centroid update; summation in point-index order.
    Matrix sums = Matrix::Zero(k, points.cols());
    std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
      counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])] += 1.0;
    }
    for (int c = 0; c < k; ++c)
      if (counts[static_cast<std::size_t>(c)] > 0.0) model.centroids.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
  }
  // Final assignment against the final centroids so that assign() agrees
  // with the stored labels.
  model.assignments.resize(static_cast<std::size_t>(n));
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto [c, d] = detail::nearest(model.centroids, points.row(i));
    model.assignments[static_cast<std::size_t>(i)] = c;
    total += d;
  }
  model.distortion = total;
  if (total < model.distortion_history.back()) model.distortion_history.push_back(total);
  return model;
}

inline IntentModel kmeans_fit(const Matrix& points, int k, std::uint64_t seed) { return kmeans_fit(points, k, 20, seed); }

/// Nearest prototype (squared Euclidean, lowest index on ties) and its vector.
inline Assignment assign(const IntentModel& model, const Matrix& h) {
  if (model.centroids.rows() == 0) throw StateError("assign: intent model is not fitted");
  if (h.rows() != 1 || h.cols() != model.centroids.cols()) throw ArgumentError("assign: dimension mismatch");
  auto [c, d] = detail::nearest(model.centroids, h);
  return Assignment{c, model.centroids.row(c)};
}

/// Indices of the m points closest to `centre`, nearest first (ties by index).
inline std::vector<std::pair<std::size_t, double>> nearest_members(const Matrix& points, const Matrix& centre,
                                                                   std::size_t m) {
  std::vector<std::pair<std::size_t, double>> d;
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    d.emplace_back(static_cast<std::size_t>(i), std::sqrt((points.row(i) - centre).squaredNorm()));
  m = std::min(m, d.size());
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(m), d.end(),
                    [](const auto& a, const auto& b) { return a.second != b.second ? a.second < b.second : a.first < b.first; });
  d.resize(m);
  return d;
}

/// Mean-pooled eval-mode representations of every sequence, one row each.
inline Matrix encode_pooled(const EncoderParams& params, const std::vector<PaddedSequence>& seqs) {
  Matrix out(static_cast<Eigen::Index>(seqs.size()), params.config.hidden);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    Tape tape;
    Var h = encode(tape, params, nullptr, seqs[i], Mode::eval, 0);
    out.row(static_cast<Eigen::Index>(i)) = tape.value(h).colwise().mean();
  }
  return out;
}

/// E-step: encode every training sequence, mean-pool, cluster into K intents.
inline IntentModel estep(const EncoderParams& params, const std::vector<PaddedSequence>& train_seqs, int k,
                         std::uint64_t seed, int max_iter = 20) {
  return kmeans_fit(encode_pooled(params, train_seqs), k, max_iter, seed);
}

/// Normalized mutual information, I(a;b)/sqrt(H(a)H(b)); 1 when both
/// labelings are constant and identical up to relabeling.
inline double normalized_mutual_information(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size() || a.empty()) throw ArgumentError("nmi: labelings must be non-empty and equal length");
  const double n = static_cast<double>(a.size());
  std::map<int, double> ca, cb;
  std::map<std::pair<int, int>, double> joint;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca[a[i]] += 1.0;
    cb[b[i]] += 1.0;
    joint[{a[i], b[i]}] += 1.0;
  }
  auto entropy = [n](const std::map<int, double>& c) {
    double h = 0.0;
    for (const auto& [k, v] : c) h -= (v / n) * std::log(v / n);
    return h;
  };
  double mi = 0.0;
  for (const auto& [key, v] : joint) mi += (v / n) * std::log((v * n) / (ca[key.first] * cb[key.second]));
  const double ha = entropy(ca);
  const double hb = entropy(cb);
  if (ha == 0.0 && hb == 0.0) return 1.0;
  if (ha == 0.0 || hb == 0.0) return 0.0;
  return std::clamp(mi / std::sqrt(ha * hb), 0.0, 1.0);
}

}  // namespace iclrec
