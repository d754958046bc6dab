// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "loretta/tensor.hpp"

namespace loretta {

/// Dimension sizes k_1..k_d of the tensor a weight matrix is reshaped into.
struct TTShape {
  std::vector<std::size_t> dims;

  TTShape() = default;
  explicit TTShape(std::vector<std::size_t> d);

  std::size_t order() const noexcept { return dims.size(); }
  std::size_t numel() const;

  friend bool operator==(const TTShape&, const TTShape&) = default;
};

/// Bond dimensions r_0..r_d with r_0 = r_d = 1.
struct TTRanks {
  std::vector<std::size_t> values;

  TTRanks() = default;
  explicit TTRanks(std::vector<std::size_t> r);

  /// Fixed-rank policy: every interior rank equals `rank`.
  static TTRanks fixed(std::size_t order, std::size_t rank);

  std::size_t operator[](std::size_t i) const { return values.at(i); }
  std::size_t size() const noexcept { return values.size(); }

  friend bool operator==(const TTRanks&, const TTRanks&) = default;
};

std::string to_string(const TTShape& shape);
std::string to_string(const TTRanks& ranks);

/// Throws unless `ranks` has order+1 entries, boundary ranks of one and
/// positive interior ranks.
void validate_pair(const TTShape& shape, const TTRanks& ranks);

/// Number of scalars in the factor chain: sum of r_{i-1} * k_i * r_i.
std::size_t tt_param_count(const TTShape& shape, const TTRanks& ranks);

/// Row-major (row, col) -> flat -> mixed-radix multi-index with a_1 most
/// significant.
std::vector<std::size_t> unravel_index(std::size_t flat, std::span<const std::size_t> dims);
std::size_t ravel_index(std::span<const std::size_t> index, std::span<const std::size_t> dims);

/// A tensor train encoding an M x N matrix. Factor i has extents
/// r_i x k_i x r_{i+1} (0-based). Immutable once constructed.
template <typename T>
class TTTensor {
 public:
  TTTensor() = default;

  /// Validates the chain and takes ownership of the factors.
  static TTTensor from_factors(std::vector<Tensor<T>> factors, std::size_t rows, std::size_t cols);

  const TTShape& shape() const noexcept { return shape_; }
  const TTRanks& ranks() const noexcept { return ranks_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t order() const noexcept { return factors_.size(); }
  const std::vector<Tensor<T>>& factors() const noexcept { return factors_; }
  const Tensor<T>& factor(std::size_t i) const { return factors_.at(i); }

  /// Entry count summed over the factor payloads.
  std::size_t param_count() const;

 private:
  TTShape shape_;
  TTRanks ranks_;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Tensor<T>> factors_;
};

template <typename T>
TTTensor<T> tt_from_factors(std::vector<Tensor<T>> factors, std::size_t rows, std::size_t cols) {
  return TTTensor<T>::from_factors(std::move(factors), rows, cols);
}

/// Product of the slices G_1[:, a_1, :] ... G_d[:, a_d, :] (0-based index).
template <typename T>
T tt_element(const TTTensor<T>& tt, std::span<const std::size_t> index);

/// Dense M x N reconstruction by left-to-right chain contraction. Cost is
/// O(prod(dims) * max_rank^2), so use it only at desk scale.
template <typename T>
Tensor<T> tt_contract(const TTTensor<T>& tt);

/// How the factor chain splits between output (row) digits and input (col)
/// digits. Cores [0, window_begin) carry only row digits, cores
/// [window_end, d) only column digits, and the cores in between (possibly
/// none) mix both and are contracted into one block of extent
/// window_rows * window_cols.
struct MatvecPlan {
  std::size_t window_begin = 0;
  std::size_t window_end = 0;
  std::size_t window_rows = 1;
  std::size_t window_cols = 1;
};

/// Picks the smallest mixing window for the given geometry. Shapes whose
/// digit boundary falls between two factors get an empty window.
MatvecPlan plan_matvec(const TTShape& shape, std::size_t rows, std::size_t cols);

/// Y[B, M] = X[B, N] * W^T with W never formed: the column cores are
/// contracted against reshaped rows of X first, then the window block,
/// then the row cores.
template <typename T>
Tensor<T> tt_apply(const TTTensor<T>& tt, const Tensor<T>& x_batch);

template <typename T>
std::vector<T> tt_matvec(const TTTensor<T>& tt, std::span<const T> x);

/// Left-to-right TT-SVD with interior ranks capped at `max_interior_rank`.
/// Singular values below the numerical-rank threshold are dropped as well.
TTTensor<double> tt_svd(const Tensor<double>& w, const TTShape& shape,
                        std::size_t max_interior_rank);

/// Fills factors i.i.d. N(0, sigma^2) from `rng`, factor by factor.
template <typename T>
std::vector<Tensor<T>> gaussian_factors(const TTShape& shape, const TTRanks& ranks, double sigma,
                                        std::mt19937_64& rng);

template <typename T>
TTTensor<T> tt_gaussian_init(const TTShape& shape, const TTRanks& ranks, std::size_t rows,
                             std::size_t cols, double sigma, std::uint64_t seed);

}  // namespace loretta
