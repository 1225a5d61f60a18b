#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace iclrec {

/// Dense row-major double matrix. Row vectors are 1×n matrices.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Item identifier. 0 is padding, 1..|V| are real items, |V|+1 is the mask token.
using ItemId = std::int32_t;

inline constexpr ItemId kPadId = 0;

// Error taxonomy. The CLI maps these onto exit codes.
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};
struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Derives an independent stream seed from a master seed and a tuple of
/// integer tags, e.g. derive_seed(master, stream, epoch, user).
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = detail::splitmix64(master);
  for (std::uint64_t tag : tags) h = detail::splitmix64(h ^ detail::splitmix64(tag + 0x632be59bd9b4e019ULL));
  return h;
}

/// floor(ratio * len) with a small tolerance so that e.g. 0.29 * 100 gives 29.
inline std::size_t ratio_count(double ratio, std::size_t len) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(len) + 1e-9));
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline Matrix row_vector(std::initializer_list<double> values) {
  Matrix m(1, static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double v : values) m(0, i++) = v;
  return m;
}

inline Matrix row_vector(const std::vector<double>& values) {
  Matrix m(1, static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = values[i];
  return m;
}

}  // namespace iclrec
