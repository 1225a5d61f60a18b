#pragma once

// Sequence transformations used to build two positive views per user:
// crop, mask and reorder. All operate on the real (unpadded) item list.

#include "iclrec/common.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

namespace iclrec {

enum class AugmentKind { crop, mask, reorder };

inline const char* to_string(AugmentKind k) {
  switch (k) {
    case AugmentKind::crop: return "crop";
    case AugmentKind::mask: return "mask";
    case AugmentKind::reorder: return "reorder";
  }
  return "?";
}

struct AugmentConfig {
  double crop_ratio = 0.6;
  double mask_ratio = 0.3;
  double reorder_ratio = 0.2;
  std::vector<AugmentKind> kinds{AugmentKind::crop, AugmentKind::mask, AugmentKind::reorder};

  void validate() const {
    for (double r : {crop_ratio, mask_ratio, reorder_ratio})
      if (!(r > 0.0 && r <= 1.0)) throw ArgumentError("augmentation ratios must be in (0, 1]");
    if (kinds.empty()) throw ArgumentError("augmentation op set is empty");
  }
};

/// A fully parameterized augmentation: kind, ratio and the drawn free parameters.
struct AugmentOp {
  AugmentKind kind = AugmentKind::crop;
  double ratio = 1.0;
  std::size_t start = 0;                  // crop, reorder
  std::vector<std::size_t> positions;     // mask
  std::vector<std::size_t> permutation;   // reorder
};

inline std::size_t crop_window(double ratio, std::size_t len) { return std::max<std::size_t>(1, ratio_count(ratio, len)); }

inline std::vector<ItemId> crop(const std::vector<ItemId>& seq, double ratio, std::size_t start) {
  if (seq.empty()) throw ArgumentError("crop: empty sequence");
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ArgumentError("crop: ratio must be in (0, 1]");
  const std::size_t window = crop_window(ratio, seq.size());
  if (start + window > seq.size()) throw ArgumentError("crop: window out of bounds");
  return {seq.begin() + static_cast<std::ptrdiff_t>(start),
          seq.begin() + static_cast<std::ptrdiff_t>(start + window)};
}

inline std::vector<ItemId> mask(const std::vector<ItemId>& seq, double ratio, const std::vector<std::size_t>& positions,
                                ItemId mask_id) {
  if (positions.size() != ratio_count(ratio, seq.size()))
    throw ArgumentError("mask: expected floor(ratio*len) positions");
  std::vector<ItemId> out = seq;
  std::vector<bool> seen(seq.size(), false);
  for (std::size_t p : positions) {
    if (p >= seq.size() || seen[p]) throw ArgumentError("mask: invalid or repeated position");
    seen[p] = true;
    out[p] = mask_id;
  }
  return out;
}

inline std::vector<ItemId> reorder(const std::vector<ItemId>& seq, double ratio, std::size_t start,
                                   const std::vector<std::size_t>& permutation) {
  const std::size_t window = ratio_count(ratio, seq.size());
  if (start + window > seq.size()) throw ArgumentError("reorder: window out of bounds");
  if (permutation.size() != window) throw ArgumentError("reorder: permutation size differs from window");
  std::vector<bool> seen(window, false);
  for (std::size_t p : permutation) {
    if (p >= window || seen[p]) throw ArgumentError("reorder: not a permutation of the window");
    seen[p] = true;
  }
  std::vector<ItemId> out = seq;
  for (std::size_t i = 0; i < window; ++i) out[start + i] = seq[start + permutation[i]];
  return out;
}

/// Draws an op kind uniformly from the configured set and its free
/// parameters for a sequence of length `len`.
template <class Rng>
AugmentOp draw_augmentation(std::size_t len, const AugmentConfig& cfg, Rng& rng) {
  AugmentOp op;
  std::uniform_int_distribution<std::size_t> pick_kind(0, cfg.kinds.size() - 1);
  op.kind = cfg.kinds[pick_kind(rng)];
  switch (op.kind) {
    case AugmentKind::crop: {
      op.ratio = cfg.crop_ratio;
      const std::size_t window = crop_window(op.ratio, len);
      op.start = std::uniform_int_distribution<std::size_t>(0, len - window)(rng);
      break;
    }
    case AugmentKind::mask: {
      op.ratio = cfg.mask_ratio;
      std::vector<std::size_t> idx(len);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(ratio_count(op.ratio, len));
      std::sort(idx.begin(), idx.end());
      op.positions = std::move(idx);
      break;
    }
    case AugmentKind::reorder: {
      op.ratio = cfg.reorder_ratio;
      const std::size_t window = ratio_count(op.ratio, len);
      op.start = std::uniform_int_distribution<std::size_t>(0, len - window)(rng);
      op.permutation.resize(window);
      std::iota(op.permutation.begin(), op.permutation.end(), std::size_t{0});
      std::shuffle(op.permutation.begin(), op.permutation.end(), rng);
      break;
    }
  }
  return op;
}

inline std::vector<ItemId> apply(const AugmentOp& op, const std::vector<ItemId>& seq, ItemId mask_id) {
  switch (op.kind) {
    case AugmentKind::crop: return crop(seq, op.ratio, op.start);
    case AugmentKind::mask: return mask(seq, op.ratio, op.positions, mask_id);
    case AugmentKind::reorder: return reorder(seq, op.ratio, op.start, op.permutation);
  }
  return seq;
}

/// Two independently drawn views of `seq`, deterministic in `seed`.
inline std::pair<std::vector<ItemId>, std::vector<ItemId>> sample_view_pair(const std::vector<ItemId>& seq,
                                                                          std::uint64_t seed, ItemId mask_id,
                                                                          const AugmentConfig& cfg = {}) {
  if (seq.empty()) throw ArgumentError("sample_view_pair: empty sequence");
  std::mt19937_64 rng(seed);
  const AugmentOp first = draw_augmentation(seq.size(), cfg, rng);
  const AugmentOp second = draw_augmentation(seq.size(), cfg, rng);
  return {apply(first, seq, mask_id), apply(second, seq, mask_id)};
}

}  // namespace iclrec
