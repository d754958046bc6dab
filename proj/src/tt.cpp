// SPDX-License-Identifier: Apache-2.0
#include "loretta/tt.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <limits>
#include <string>

namespace loretta {

TTShape::TTShape(std::vector<std::size_t> d) : dims(std::move(d)) {
  require(dims.size() >= 2, ErrorCode::InvalidShape,
          "TT shape needs at least two dimensions, got " + std::to_string(dims.size()));
  for (std::size_t k : dims) require(k >= 1, ErrorCode::InvalidShape, "TT dimension must be >= 1");
}

std::size_t TTShape::numel() const { return shape_numel(dims); }

TTRanks::TTRanks(std::vector<std::size_t> r) : values(std::move(r)) {
  require(values.size() >= 3, ErrorCode::InvalidShape, "rank chain too short");
  require(values.front() == 1 && values.back() == 1, ErrorCode::BoundaryRankNotOne,
          "boundary ranks must be 1, got " + to_string(*this));
  for (std::size_t r : values) require(r >= 1, ErrorCode::InvalidShape, "TT rank must be >= 1");
}

TTRanks TTRanks::fixed(std::size_t order, std::size_t rank) {
  require(order >= 2, ErrorCode::InvalidShape, "TT order must be >= 2");
  require(rank >= 1, ErrorCode::InvalidShape, "TT rank must be >= 1");
  std::vector<std::size_t> r(order + 1, rank);
  r.front() = 1;
  r.back() = 1;
  return TTRanks(std::move(r));
}

std::string to_string(const TTShape& shape) { return shape_to_string(shape.dims); }
std::string to_string(const TTRanks& ranks) { return shape_to_string(ranks.values); }

void validate_pair(const TTShape& shape, const TTRanks& ranks) {
  require(shape.order() >= 2, ErrorCode::InvalidShape, "TT shape needs at least two dimensions");
  require(ranks.size() == shape.order() + 1, ErrorCode::RankChainMismatch,
          "rank chain " + to_string(ranks) + " does not pair with shape " + to_string(shape));
  require(ranks.values.front() == 1 && ranks.values.back() == 1, ErrorCode::BoundaryRankNotOne,
          "boundary ranks must be 1");
}

std::size_t tt_param_count(const TTShape& shape, const TTRanks& ranks) {
  validate_pair(shape, ranks);
  std::size_t total = 0;
  for (std::size_t i = 0; i < shape.order(); ++i) total += ranks[i] * shape.dims[i] * ranks[i + 1];
  return total;
}

std::vector<std::size_t> unravel_index(std::size_t flat, std::span<const std::size_t> dims) {
  std::vector<std::size_t> index(dims.size());
  for (std::size_t i = dims.size(); i-- > 0;) {
    index[i] = flat % dims[i];
    flat /= dims[i];
  }
  return index;
}

std::size_t ravel_index(std::span<const std::size_t> index, std::span<const std::size_t> dims) {
  std::size_t flat = 0;
  for (std::size_t i = 0; i < dims.size(); ++i) flat = flat * dims[i] + index[i];
  return flat;
}

template <typename T>
TTTensor<T> TTTensor<T>::from_factors(std::vector<Tensor<T>> factors, std::size_t rows,
                                      std::size_t cols) {
  require(!factors.empty(), ErrorCode::InvalidShape, "empty factor list");
  for (const auto& f : factors)
    require(f.rank() == 3, ErrorCode::InvalidShape,
            "TT factor must be 3-way, got shape " + shape_to_string(f.shape()));
  require(factors.size() >= 2, ErrorCode::InvalidShape,
          "a TT needs at least two factors (1 x 1 matrices are not tensorizable)");

  for (std::size_t i = 0; i + 1 < factors.size(); ++i) {
    require(factors[i].dim(2) == factors[i + 1].dim(0), ErrorCode::RankChainMismatch,
            "factor " + std::to_string(i) + " ends with rank " + std::to_string(factors[i].dim(2)) +
                " but factor " + std::to_string(i + 1) + " starts with " +
                std::to_string(factors[i + 1].dim(0)));
  }
  require(factors.front().dim(0) == 1 && factors.back().dim(2) == 1,
          ErrorCode::BoundaryRankNotOne, "first and last rank extents must be 1");

  std::vector<std::size_t> dims;
  std::vector<std::size_t> ranks{1};
  for (const auto& f : factors) {
    require(f.dim(1) >= 1 && f.dim(0) >= 1 && f.dim(2) >= 1, ErrorCode::InvalidShape,
            "zero-sized factor extent");
    dims.push_back(f.dim(1));
    ranks.push_back(f.dim(2));
  }
  require(shape_numel(dims) == rows * cols, ErrorCode::ShapeProductMismatch,
          "dims " + shape_to_string(dims) + " multiply to " + std::to_string(shape_numel(dims)) +
              " but the matrix is " + std::to_string(rows) + "x" + std::to_string(cols));
  for (std::size_t i = 0; i < factors.size(); ++i)
    require(factors[i].all_finite(), ErrorCode::NonFiniteEntry,
            "factor " + std::to_string(i) + " has a non-finite entry");

  TTTensor tt;
  tt.shape_ = TTShape(std::move(dims));
  tt.ranks_ = TTRanks(std::move(ranks));
  tt.rows_ = rows;
  tt.cols_ = cols;
  tt.factors_ = std::move(factors);
  return tt;
}

template <typename T>
std::size_t TTTensor<T>::param_count() const {
  std::size_t n = 0;
  for (const auto& f : factors_) n += f.size();
  return n;
}

template <typename T>
T tt_element(const TTTensor<T>& tt, std::span<const std::size_t> index) {
  require(index.size() == tt.order(), ErrorCode::IndexOutOfBounds,
          "index has " + std::to_string(index.size()) + " entries for an order-" +
              std::to_string(tt.order()) + " TT");
  for (std::size_t i = 0; i < index.size(); ++i)
    require(index[i] < tt.shape().dims[i], ErrorCode::IndexOutOfBounds,
            "index " + std::to_string(index[i]) + " out of range at position " + std::to_string(i));

  // Row vector times each slice in turn.
  std::vector<T> row{T{1}};
  for (std::size_t i = 0; i < tt.order(); ++i) {
    const Tensor<T>& g = tt.factor(i);
    const std::size_t r_out = g.dim(2);
    std::vector<T> next(r_out, T{0});
    for (std::size_t a = 0; a < row.size(); ++a)
      for (std::size_t b = 0; b < r_out; ++b) next[b] += row[a] * g(a, index[i], b);
    row = std::move(next);
  }
  return row[0];
}

template <typename T>
Tensor<T> tt_contract(const TTTensor<T>& tt) {
  const auto& f0 = tt.factor(0);
  std::size_t lead = f0.dim(1);
  std::vector<T> acc(f0.values().begin(), f0.values().end());  // [k_1, r_1]
  for (std::size_t i = 1; i < tt.order(); ++i) {
    const auto& g = tt.factor(i);
    const std::size_t r_in = g.dim(0);
    const std::size_t tail = g.dim(1) * g.dim(2);
    std::vector<T> next(lead * tail, T{0});
    dense::gemm_acc(acc.data(), g.data(), next.data(), lead, r_in, tail);
    acc = std::move(next);
    lead *= g.dim(1);
  }
  return Tensor<T>(Shape{tt.rows(), tt.cols()}, std::move(acc));
}

MatvecPlan plan_matvec(const TTShape& shape, std::size_t rows, std::size_t cols) {
  const std::size_t d = shape.order();
  require(shape.numel() == rows * cols, ErrorCode::ShapeProductMismatch,
          "shape " + to_string(shape) + " does not match " + std::to_string(rows) + "x" +
              std::to_string(cols));
  MatvecPlan best;
  std::size_t best_size = std::numeric_limits<std::size_t>::max();
  std::size_t prefix = 1;
  for (std::size_t s = 0; s <= d; ++s) {
    if (s > 0) prefix *= shape.dims[s - 1];
    if (rows % prefix != 0) break;
    std::size_t window = 1;
    for (std::size_t t = s; t <= d; ++t) {
      if (t > s) window *= shape.dims[t - 1];
      const std::size_t suffix = rows * cols / (prefix * window);
      if (cols % suffix != 0) continue;
      if (window < best_size) {
        best_size = window;
        best = MatvecPlan{s, t, rows / prefix, cols / suffix};
      }
      break;  // larger t only grows the window
    }
  }
  return best;
}

template <typename T>
Tensor<T> tt_apply(const TTTensor<T>& tt, const Tensor<T>& x_batch) {
  require(x_batch.rank() == 2 && x_batch.cols() == tt.cols(), ErrorCode::DimensionMismatch,
          "TT layer expects inputs of width " + std::to_string(tt.cols()) + ", got " +
              shape_to_string(x_batch.shape()));
  const std::size_t batch = x_batch.rows();
  const auto& dims = tt.shape().dims;
  const std::size_t d = tt.order();
  const MatvecPlan plan = plan_matvec(tt.shape(), tt.rows(), tt.cols());
  const std::size_t s = plan.window_begin;
  const std::size_t t = plan.window_end;

  // Column cores, right to left: state rows shrink one digit per core.
  std::vector<T> state(x_batch.values().begin(), x_batch.values().end());
  std::size_t lead = batch * tt.cols();
  for (std::size_t j = d; j-- > t;) {
    const auto& g = tt.factor(j);
    const std::size_t r_in = g.dim(0);
    const std::size_t inner = g.dim(1) * g.dim(2);
    lead /= dims[j];
    std::vector<T> next(lead * r_in, T{0});
    for (std::size_t row = 0; row < lead; ++row) {
      const T* srow = state.data() + row * inner;
      T* nrow = next.data() + row * r_in;
      for (std::size_t a = 0; a < r_in; ++a) {
        const T* grow = g.data() + a * inner;
        T acc{0};
        for (std::size_t q = 0; q < inner; ++q) acc += srow[q] * grow[q];
        nrow[a] = acc;
      }
    }
    state = std::move(next);
  }
  // state: [batch, window_cols, r_t]

  // Window block C: [r_s * window_rows, window_cols * r_t].
  const std::size_t r_s = tt.ranks()[s];
  const std::size_t r_t = tt.ranks()[t];
  const std::size_t wr = plan.window_rows;
  const std::size_t wc = plan.window_cols;
  std::vector<T> out;  // [batch, r_s, wr]
  if (s == t) {
    out = std::move(state);
  } else {
    std::vector<T> block(tt.factor(s).values().begin(), tt.factor(s).values().end());
    std::size_t block_lead = r_s * dims[s];
    for (std::size_t j = s + 1; j < t; ++j) {
      const auto& g = tt.factor(j);
      const std::size_t tail = g.dim(1) * g.dim(2);
      std::vector<T> next(block_lead * tail, T{0});
      dense::gemm_acc(block.data(), g.data(), next.data(), block_lead, g.dim(0), tail);
      block = std::move(next);
      block_lead *= dims[j];
    }
    const std::size_t inner = wc * r_t;
    const std::size_t outer = r_s * wr;
    out.assign(batch * outer, T{0});
    for (std::size_t b = 0; b < batch; ++b) {
      const T* srow = state.data() + b * inner;
      for (std::size_t o = 0; o < outer; ++o) {
        const T* crow = block.data() + o * inner;
        T acc{0};
        for (std::size_t q = 0; q < inner; ++q) acc += srow[q] * crow[q];
        out[b * outer + o] = acc;
      }
    }
  }

  // Row cores, right to left: each prepends one output digit.
  std::size_t tail = wr;
  for (std::size_t j = s; j-- > 0;) {
    const auto& g = tt.factor(j);
    const std::size_t r_in = g.dim(0);
    const std::size_t r_out = g.dim(2);
    const std::size_t rows_g = r_in * dims[j];
    std::vector<T> next(batch * rows_g * tail, T{0});
    for (std::size_t b = 0; b < batch; ++b)
      dense::gemm_acc(g.data(), out.data() + b * r_out * tail, next.data() + b * rows_g * tail,
                      rows_g, r_out, tail);
    out = std::move(next);
    tail *= dims[j];
  }
  return Tensor<T>(Shape{batch, tt.rows()}, std::move(out));
}

template <typename T>
std::vector<T> tt_matvec(const TTTensor<T>& tt, std::span<const T> x) {
  require(x.size() == tt.cols(), ErrorCode::DimensionMismatch,
          "vector of length " + std::to_string(x.size()) + " for a TT with " +
              std::to_string(tt.cols()) + " columns");
  Tensor<T> xb(Shape{1, x.size()}, std::vector<T>(x.begin(), x.end()));
  return tt_apply(tt, xb).storage();
}

TTTensor<double> tt_svd(const Tensor<double>& w, const TTShape& shape,
                        std::size_t max_interior_rank) {
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  require(w.rank() == 2, ErrorCode::DimensionMismatch, "tt_svd expects a matrix");
  require(shape.numel() == w.size(), ErrorCode::ShapeProductMismatch,
          "shape " + to_string(shape) + " does not match " + shape_to_string(w.shape()));
  require(max_interior_rank >= 1, ErrorCode::InvalidShape, "max interior rank must be >= 1");
  require(w.all_finite(), ErrorCode::NonFiniteEntry, "input matrix has non-finite entries");

  const std::size_t d = shape.order();
  std::vector<Tensor<double>> factors;
  std::vector<double> rest(w.values().begin(), w.values().end());
  std::size_t r_prev = 1;
  std::size_t remaining = shape.numel();
  for (std::size_t i = 0; i + 1 < d; ++i) {
    const std::size_t k = shape.dims[i];
    remaining /= k;
    const auto m = static_cast<Eigen::Index>(r_prev * k);
    const auto n = static_cast<Eigen::Index>(remaining);
    Eigen::Map<const RowMatrix> unfolding(rest.data(), m, n);
    Eigen::JacobiSVD<RowMatrix> svd(unfolding, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sigma = svd.singularValues();
    require(sigma.allFinite() && svd.matrixU().allFinite() && svd.matrixV().allFinite(),
            ErrorCode::SvdFailure, "SVD of unfolding " + std::to_string(i) + " did not converge");

    std::size_t numerical_rank = 0;
    const double cutoff = sigma.size() > 0
                              ? sigma(0) * static_cast<double>(std::max(m, n)) *
                                    std::numeric_limits<double>::epsilon()
                              : 0.0;
    for (Eigen::Index j = 0; j < sigma.size(); ++j)
      if (sigma(j) > cutoff) ++numerical_rank;
    const std::size_t r = std::max<std::size_t>(1, std::min(max_interior_rank, numerical_rank));

    Tensor<double> core(Shape{r_prev, k, r});
    RowMatrix u = svd.matrixU().leftCols(static_cast<Eigen::Index>(r));
    std::copy(u.data(), u.data() + u.size(), core.data());
    factors.push_back(std::move(core));

    RowMatrix next = sigma.head(static_cast<Eigen::Index>(r)).asDiagonal() *
                     svd.matrixV().leftCols(static_cast<Eigen::Index>(r)).transpose();
    rest.assign(next.data(), next.data() + next.size());
    r_prev = r;
  }
  factors.emplace_back(Shape{r_prev, shape.dims[d - 1], 1}, std::move(rest));
  return TTTensor<double>::from_factors(std::move(factors), w.rows(), w.cols());
}

template <typename T>
std::vector<Tensor<T>> gaussian_factors(const TTShape& shape, const TTRanks& ranks, double sigma,
                                        std::mt19937_64& rng) {
  require(sigma > 0.0 && std::isfinite(sigma), ErrorCode::InvalidSigma,
          "sigma must be positive, got " + std::to_string(sigma));
  validate_pair(shape, ranks);
  std::normal_distribution<double> normal(0.0, sigma);
  std::vector<Tensor<T>> factors;
  factors.reserve(shape.order());
  for (std::size_t i = 0; i < shape.order(); ++i) {
    Tensor<T> g(Shape{ranks[i], shape.dims[i], ranks[i + 1]});
    for (auto& v : g.values()) v = static_cast<T>(normal(rng));
    factors.push_back(std::move(g));
  }
  return factors;
}

template <typename T>
TTTensor<T> tt_gaussian_init(const TTShape& shape, const TTRanks& ranks, std::size_t rows,
                             std::size_t cols, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return TTTensor<T>::from_factors(gaussian_factors<T>(shape, ranks, sigma, rng), rows, cols);
}

#define LORETTA_INSTANTIATE_TT(T)                                                              \
  template class TTTensor<T>;                                                                  \
  template T tt_element(const TTTensor<T>&, std::span<const std::size_t>);                     \
  template Tensor<T> tt_contract(const TTTensor<T>&);                                          \
  template Tensor<T> tt_apply(const TTTensor<T>&, const Tensor<T>&);                           \
  template std::vector<T> tt_matvec(const TTTensor<T>&, std::span<const T>);                   \
  template std::vector<Tensor<T>> gaussian_factors(const TTShape&, const TTRanks&, double,     \
                                                   std::mt19937_64&);                          \
  template TTTensor<T> tt_gaussian_init(const TTShape&, const TTRanks&, std::size_t,           \
                                        std::size_t, double, std::uint64_t);

LORETTA_INSTANTIATE_TT(float)
LORETTA_INSTANTIATE_TT(double)

}  // namespace loretta
