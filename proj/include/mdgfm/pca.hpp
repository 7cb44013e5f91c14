#pragma once

#include <cstdint>

#include "mdgfm/dense.hpp"

namespace mdgfm {

// Frozen per-graph PCA projection to the unified dimension. When the raw
// width is smaller than the target width the basis keeps every component and
// projected features are zero-padded on the right.
struct ProjectionBasis {
  RowVector mean;
  DenseMatrix basis;                   // raw_dim x min(raw_dim, target_dim), orthonormal columns
  Eigen::VectorXd explained_variance;  // length target_dim, non-increasing
  Index target_dim = 0;

  Index raw_dim() const { return mean.size(); }
  bool operator==(const ProjectionBasis&) const = default;
};

struct PcaOptions {
  bool center = true;
  // Covariances up to this width use Jacobi rotations; wider ones use block
  // power iteration on the leading components only.
  Index jacobi_max_dim = 512;
  std::uint64_t seed = 0;
};

// Eigenpairs of a symmetric matrix, eigenvalues sorted descending.
struct SymmetricEigen {
  Eigen::VectorXd values;
  DenseMatrix vectors;  // columns
};

// Cyclic Jacobi rotations until the off-diagonal mass is below tol relative to
// the Frobenius norm.
SymmetricEigen jacobi_eigen(const DenseMatrix& s, double tol = 1e-15, int max_sweeps = 100);

// Leading `count` eigenpairs of a symmetric positive semi-definite matrix by
// block power iteration with Rayleigh-Ritz refinement.
SymmetricEigen leading_eigen(const DenseMatrix& s, Index count, std::uint64_t seed = 0,
                             double tol = 1e-12, int max_iterations = 2000);

// Fits the basis on x (n x raw_dim). Each basis column's largest-magnitude
// entry is made positive.
ProjectionBasis fit_pca(const DenseMatrix& x, Index target_dim, const PcaOptions& options = {});

// (x - mean) * basis, zero-padded to the target width.
DenseMatrix project(const DenseMatrix& x, const ProjectionBasis& basis);

}  // namespace mdgfm
