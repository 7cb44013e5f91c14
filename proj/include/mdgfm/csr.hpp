#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <tuple>
#include <vector>

#include "mdgfm/dense.hpp"
#include "mdgfm/error.hpp"

namespace mdgfm {

template <typename Scalar>
struct Triplet {
  std::size_t row;
  std::size_t col;
  Scalar value;
};

enum class DuplicatePolicy { keep_first, sum };

// Compressed sparse row matrix in canonical form: strictly increasing column
// indices within each row, finite values. Adjacency matrices are additionally
// non-negative; raw kNN similarity matrices may hold negative entries until
// post-processing applies the ReLU.
template <typename Scalar>
class CsrMatrix {
 public:
  CsrMatrix() = default;

  CsrMatrix(std::size_t n_rows, std::size_t n_cols, std::vector<std::size_t> row_ptr,
            std::vector<std::size_t> col_idx, std::vector<Scalar> values)
      : n_rows_(n_rows),
        n_cols_(n_cols),
        row_ptr_(std::move(row_ptr)),
        col_idx_(std::move(col_idx)),
        values_(std::move(values)) {
    validate();
  }

  static CsrMatrix empty(std::size_t n_rows, std::size_t n_cols) {
    return CsrMatrix(n_rows, n_cols, std::vector<std::size_t>(n_rows + 1, 0), {}, {});
  }

  static CsrMatrix identity(std::size_t n) {
    std::vector<std::size_t> ptr(n + 1);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i <= n; ++i) ptr[i] = i;
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return CsrMatrix(n, n, std::move(ptr), std::move(idx), std::vector<Scalar>(n, Scalar(1)));
  }

  static CsrMatrix from_triplets(std::size_t n_rows, std::size_t n_cols,
                                 std::vector<Triplet<Scalar>> triplets,
                                 DuplicatePolicy policy = DuplicatePolicy::keep_first) {
    // Stable counting sort by row, then a stable sort by column inside each row.
    std::vector<std::size_t> start(n_rows + 1, 0);
    for (const auto& tr : triplets) {
      if (tr.row >= n_rows || tr.col >= n_cols) {
        throw BoundsError("triplet (" + std::to_string(tr.row) + "," + std::to_string(tr.col) +
                          ") outside " + std::to_string(n_rows) + "x" + std::to_string(n_cols));
      }
      ++start[tr.row + 1];
    }
    for (std::size_t i = 0; i < n_rows; ++i) start[i + 1] += start[i];
    {
      std::vector<Triplet<Scalar>> sorted(triplets.size());
      std::vector<std::size_t> next(start.begin(), start.end() - 1);
      for (const auto& tr : triplets) sorted[next[tr.row]++] = tr;
      triplets = std::move(sorted);
    }
    for (std::size_t i = 0; i < n_rows; ++i) {
      std::stable_sort(triplets.begin() + static_cast<std::ptrdiff_t>(start[i]),
                       triplets.begin() + static_cast<std::ptrdiff_t>(start[i + 1]),
                       [](const auto& a, const auto& b) { return a.col < b.col; });
    }
    std::vector<std::size_t> ptr(n_rows + 1, 0);
    std::vector<std::size_t> idx;
    std::vector<Scalar> val;
    idx.reserve(triplets.size());
    val.reserve(triplets.size());
    for (std::size_t t = 0; t < triplets.size(); ++t) {
      const auto& tr = triplets[t];
      if (t > 0 && triplets[t - 1].row == tr.row && triplets[t - 1].col == tr.col) {
        if (policy == DuplicatePolicy::sum) val.back() += tr.value;
        continue;
      }
      idx.push_back(tr.col);
      val.push_back(tr.value);
      ++ptr[tr.row + 1];
    }
    for (std::size_t i = 0; i < n_rows; ++i) ptr[i + 1] += ptr[i];
    return CsrMatrix(n_rows, n_cols, std::move(ptr), std::move(idx), std::move(val));
  }

  // Stores every entry of `dense` whose value is non-zero.
  template <typename Derived>
  static CsrMatrix from_dense(const Eigen::MatrixBase<Derived>& dense) {
    std::vector<Triplet<Scalar>> trips;
    for (Index i = 0; i < dense.rows(); ++i) {
      for (Index j = 0; j < dense.cols(); ++j) {
        if (dense(i, j) != Scalar(0)) {
          trips.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), dense(i, j)});
        }
      }
    }
    return from_triplets(static_cast<std::size_t>(dense.rows()),
                         static_cast<std::size_t>(dense.cols()), std::move(trips));
  }

  std::size_t rows() const { return n_rows_; }
  std::size_t cols() const { return n_cols_; }
  std::size_t nnz() const { return col_idx_.size(); }
  bool is_square() const { return n_rows_ == n_cols_; }

  const std::vector<std::size_t>& row_ptr() const { return row_ptr_; }
  const std::vector<std::size_t>& col_idx() const { return col_idx_; }
  const std::vector<Scalar>& values() const { return values_; }

  // Same sparsity pattern, new values.
  CsrMatrix with_values(std::vector<Scalar> values) const {
    if (values.size() != nnz()) throw ShapeError("with_values: value count does not match nnz");
    CsrMatrix out = *this;
    out.values_ = std::move(values);
    out.validate_values();
    return out;
  }

  std::size_t row_begin(std::size_t r) const { return row_ptr_[r]; }
  std::size_t row_end(std::size_t r) const { return row_ptr_[r + 1]; }

  // Stored value at (r, c) or zero.
  Scalar coeff(std::size_t r, std::size_t c) const {
    auto first = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[r]);
    auto last = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[r + 1]);
    auto it = std::lower_bound(first, last, c);
    if (it == last || *it != c) return Scalar(0);
    return values_[static_cast<std::size_t>(it - col_idx_.begin())];
  }

  DenseMatrixT<Scalar> to_dense() const {
    DenseMatrixT<Scalar> out = DenseMatrixT<Scalar>::Zero(static_cast<Index>(n_rows_),
                                                          static_cast<Index>(n_cols_));
    for (std::size_t r = 0; r < n_rows_; ++r) {
      for (std::size_t e = row_ptr_[r]; e < row_ptr_[r + 1]; ++e) {
        out(static_cast<Index>(r), static_cast<Index>(col_idx_[e])) = values_[e];
      }
    }
    return out;
  }

  CsrMatrix transpose() const {
    std::vector<std::size_t> ptr(n_cols_ + 1, 0);
    for (std::size_t c : col_idx_) ++ptr[c + 1];
    for (std::size_t i = 0; i < n_cols_; ++i) ptr[i + 1] += ptr[i];
    std::vector<std::size_t> idx(nnz());
    std::vector<Scalar> val(nnz());
    std::vector<std::size_t> cursor(ptr.begin(), ptr.end() - 1);
    for (std::size_t r = 0; r < n_rows_; ++r) {
      for (std::size_t e = row_ptr_[r]; e < row_ptr_[r + 1]; ++e) {
        const std::size_t dst = cursor[col_idx_[e]]++;
        idx[dst] = r;
        val[dst] = values_[e];
      }
    }
    return CsrMatrix(n_cols_, n_rows_, std::move(ptr), std::move(idx), std::move(val));
  }

  // Drops stored entries equal to zero.
  CsrMatrix pruned() const {
    std::vector<std::size_t> ptr(n_rows_ + 1, 0);
    std::vector<std::size_t> idx;
    std::vector<Scalar> val;
    for (std::size_t r = 0; r < n_rows_; ++r) {
      for (std::size_t e = row_ptr_[r]; e < row_ptr_[r + 1]; ++e) {
        if (values_[e] != Scalar(0)) {
          idx.push_back(col_idx_[e]);
          val.push_back(values_[e]);
        }
      }
      ptr[r + 1] = idx.size();
    }
    return CsrMatrix(n_rows_, n_cols_, std::move(ptr), std::move(idx), std::move(val));
  }

  bool all_nonnegative() const {
    return std::all_of(values_.begin(), values_.end(), [](Scalar v) { return v >= Scalar(0); });
  }

  bool operator==(const CsrMatrix& other) const = default;

 private:
  void validate() const {
    if (row_ptr_.size() != n_rows_ + 1) throw ShapeError("csr: row_ptr length must be n_rows+1");
    if (row_ptr_.front() != 0) throw ShapeError("csr: row_ptr[0] must be 0");
    if (row_ptr_.back() != col_idx_.size() || col_idx_.size() != values_.size()) {
      throw ShapeError("csr: row_ptr[n_rows], col_idx and values lengths disagree");
    }
    for (std::size_t r = 0; r < n_rows_; ++r) {
      if (row_ptr_[r] > row_ptr_[r + 1]) throw ShapeError("csr: row_ptr must be non-decreasing");
      for (std::size_t e = row_ptr_[r]; e < row_ptr_[r + 1]; ++e) {
        if (col_idx_[e] >= n_cols_) throw BoundsError("csr: column index out of range");
        if (e > row_ptr_[r] && col_idx_[e] <= col_idx_[e - 1]) {
          throw ShapeError("csr: column indices must be strictly increasing within a row");
        }
      }
    }
    validate_values();
  }

  void validate_values() const {
    for (const Scalar& v : values_) {
      if (!std::isfinite(v)) throw PreconditionError("csr: values must be finite");
    }
  }

  std::size_t n_rows_ = 0;
  std::size_t n_cols_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::size_t> col_idx_;
  std::vector<Scalar> values_;
};

using Csr = CsrMatrix<double>;

// Sparse times dense. Rows are accumulated in stored (column) order.
template <typename Scalar, typename Derived>
DenseMatrixT<Scalar> spmm(const CsrMatrix<Scalar>& a, const Eigen::MatrixBase<Derived>& x) {
  if (a.cols() != static_cast<std::size_t>(x.rows())) {
    throw ShapeError("spmm: a has " + std::to_string(a.cols()) + " columns but x has " +
                     std::to_string(x.rows()) + " rows");
  }
  DenseMatrixT<Scalar> out = DenseMatrixT<Scalar>::Zero(static_cast<Index>(a.rows()), x.cols());
  const auto& ptr = a.row_ptr();
  const auto& idx = a.col_idx();
  const auto& val = a.values();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto row = out.row(static_cast<Index>(r));
    for (std::size_t e = ptr[r]; e < ptr[r + 1]; ++e) {
      row.noalias() += val[e] * x.row(static_cast<Index>(idx[e]));
    }
  }
  return out;
}

// (relu(A) + relu(A)^T) / 2 on a dense square matrix.
template <typename Derived>
DenseMatrixT<typename Derived::Scalar> symmetrize_activate(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  if (a.rows() != a.cols()) throw ShapeError("symmetrize_activate: matrix must be square");
  const DenseMatrixT<Scalar> act = a.cwiseMax(Scalar(0));
  DenseMatrixT<Scalar> out(a.rows(), a.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) out(i, j) = (act(i, j) + act(j, i)) / Scalar(2);
  }
  return out;
}

// Sparse variant: the output pattern is the union of the patterns of A and
// A^T, with entries that ReLU zeroes dropped.
template <typename Scalar>
CsrMatrix<Scalar> symmetrize_activate(const CsrMatrix<Scalar>& a) {
  if (!a.is_square()) throw ShapeError("symmetrize_activate: matrix must be square");
  std::vector<Triplet<Scalar>> trips;
  trips.reserve(2 * a.nnz());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t e = a.row_begin(r); e < a.row_end(r); ++e) {
      const Scalar v = std::max(a.values()[e], Scalar(0)) / Scalar(2);
      if (v == Scalar(0)) continue;
      trips.push_back({r, a.col_idx()[e], v});
      trips.push_back({a.col_idx()[e], r, v});
    }
  }
  return CsrMatrix<Scalar>::from_triplets(a.rows(), a.cols(), std::move(trips),
                                          DuplicatePolicy::sum);
}

inline constexpr double kDefaultDegreeEps = 1e-12;
inline constexpr double kSymmetryTolerance = 1e-9;

// D^{-1/2} (A + I) D^{-1/2} with D the row sums of A + I, each clamped below by eps.
template <typename Derived>
DenseMatrixT<typename Derived::Scalar> degree_normalize_selfloops(
    const Eigen::MatrixBase<Derived>& a, double eps = kDefaultDegreeEps) {
  using Scalar = typename Derived::Scalar;
  if (a.rows() != a.cols()) throw ShapeError("degree_normalize_selfloops: matrix must be square");
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > kSymmetryTolerance) {
    throw PreconditionError("degree_normalize_selfloops: input is not symmetric");
  }
  DenseMatrixT<Scalar> tilde = a;
  tilde.diagonal().array() += Scalar(1);
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> deg =
      tilde.rowwise().sum().cwiseMax(Scalar(eps));
  DenseMatrixT<Scalar> out(a.rows(), a.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) out(i, j) = tilde(i, j) / std::sqrt(deg(i) * deg(j));
  }
  return out;
}

template <typename Scalar>
bool is_symmetric(const CsrMatrix<Scalar>& a, double tol = 0.0) {
  if (!a.is_square()) return false;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t e = a.row_begin(r); e < a.row_end(r); ++e) {
      if (std::abs(a.values()[e] - a.coeff(a.col_idx()[e], r)) > tol) return false;
    }
  }
  return true;
}

// Sparse variant: stored pattern plus the diagonal.
template <typename Scalar>
CsrMatrix<Scalar> degree_normalize_selfloops(const CsrMatrix<Scalar>& a,
                                             double eps = kDefaultDegreeEps) {
  if (!a.is_square()) throw ShapeError("degree_normalize_selfloops: matrix must be square");
  if (!is_symmetric(a, kSymmetryTolerance)) {
    throw PreconditionError("degree_normalize_selfloops: input is not symmetric");
  }
  if (!a.all_nonnegative()) {
    throw PreconditionError("degree_normalize_selfloops: input has negative entries");
  }
  std::vector<Triplet<Scalar>> trips;
  trips.reserve(a.nnz() + a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t e = a.row_begin(r); e < a.row_end(r); ++e) {
      trips.push_back({r, a.col_idx()[e], a.values()[e]});
    }
    trips.push_back({r, r, Scalar(1)});
  }
  auto tilde = CsrMatrix<Scalar>::from_triplets(a.rows(), a.cols(), std::move(trips),
                                                DuplicatePolicy::sum);
  std::vector<Scalar> deg(a.rows(), Scalar(0));
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t e = tilde.row_begin(r); e < tilde.row_end(r); ++e) deg[r] += tilde.values()[e];
    deg[r] = std::max(deg[r], Scalar(eps));
  }
  std::vector<Scalar> vals(tilde.nnz());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t e = tilde.row_begin(r); e < tilde.row_end(r); ++e) {
      vals[e] = tilde.values()[e] / std::sqrt(deg[r] * deg[tilde.col_idx()[e]]);
    }
  }
  return tilde.with_values(std::move(vals));
}

}  // namespace mdgfm
