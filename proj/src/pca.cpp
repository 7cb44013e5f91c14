#include "mdgfm/pca.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mdgfm/error.hpp"

namespace mdgfm {
namespace {

SymmetricEigen sorted_descending(const Eigen::VectorXd& values, const DenseMatrix& vectors) {
  std::vector<Index> order(static_cast<std::size_t>(values.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return values(a) > values(b); });
  SymmetricEigen out;
  out.values.resize(values.size());
  out.vectors.resize(vectors.rows(), values.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    out.values(static_cast<Index>(k)) = values(order[k]);
    out.vectors.col(static_cast<Index>(k)) = vectors.col(order[k]);
  }
  return out;
}

void fix_signs(DenseMatrix& basis) {
  for (Index c = 0; c < basis.cols(); ++c) {
    Index arg = 0;
    basis.col(c).cwiseAbs().maxCoeff(&arg);
    if (basis(arg, c) < 0.0) basis.col(c) *= -1.0;
  }
}

}  // namespace

SymmetricEigen jacobi_eigen(const DenseMatrix& s, double tol, int max_sweeps) {
  if (s.rows() != s.cols()) throw ShapeError("jacobi_eigen: matrix must be square");
  const Index n = s.rows();
  Eigen::MatrixXd a = s;  // column-major: rotations touch columns and rows equally
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  const double scale = a.norm();
  for (int sweep = 0; sweep < max_sweeps && scale > 0.0; ++sweep) {
    double off = 0.0;
    for (Index q = 1; q < n; ++q) off += a.col(q).head(q).squaredNorm();
    if (std::sqrt(2.0 * off) <= tol * scale) break;
    bool rotated = false;
    for (Index p = 0; p < n - 1; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double g = 100.0 * std::abs(apq);
        if (std::abs(a(p, p)) + g == std::abs(a(p, p)) && std::abs(a(q, q)) + g == std::abs(a(q, q))) {
          a(p, q) = 0.0;
          a(q, p) = 0.0;
          continue;
        }
        rotated = true;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (Index k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
    }
    if (!rotated) break;
  }
  return sorted_descending(a.diagonal(), v);
}

SymmetricEigen leading_eigen(const DenseMatrix& s, Index count, std::uint64_t seed, double tol,
                             int max_iterations) {
  if (s.rows() != s.cols()) throw ShapeError("leading_eigen: matrix must be square");
  const Index n = s.rows();
  count = std::min(count, n);
  const Index block = std::min(n, count + 8);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd q(n, block);
  for (Index i = 0; i < q.size(); ++i) q.data()[i] = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(q);
  q = qr.householderQ() * Eigen::MatrixXd::Identity(n, block);

  Eigen::VectorXd previous = Eigen::VectorXd::Constant(count, -1.0);
  SymmetricEigen ritz;
  for (int it = 0; it < max_iterations; ++it) {
    Eigen::MatrixXd z = s * q;
    qr.compute(z);
    q = qr.householderQ() * Eigen::MatrixXd::Identity(n, block);
    const DenseMatrix small = q.transpose() * s * q;
    ritz = jacobi_eigen(0.5 * (small + small.transpose()));
    q = q * Eigen::MatrixXd(ritz.vectors);
    const Eigen::VectorXd current = ritz.values.head(count);
    const double ref = std::max(std::abs(current(0)), 1e-300);
    if (((current - previous).cwiseAbs().maxCoeff() <= tol * ref)) break;
    previous = current;
  }
  SymmetricEigen out;
  out.values = ritz.values.head(count);
  out.vectors = q.leftCols(count);
  return out;
}

ProjectionBasis fit_pca(const DenseMatrix& x, Index target_dim, const PcaOptions& options) {
  if (target_dim <= 0) throw ConfigError("fit_pca: target dimension must be positive");
  if (x.rows() < 1) throw PreconditionError("fit_pca: need at least one row");
  const Index raw = x.cols();
  ProjectionBasis out;
  out.target_dim = target_dim;
  out.mean = options.center ? RowVector(x.colwise().mean()) : RowVector::Zero(raw);
  const DenseMatrix centered = x.rowwise() - out.mean;
  const double denom = static_cast<double>(std::max<Index>(x.rows() - 1, 1));
  const DenseMatrix cov = (centered.transpose() * centered) / denom;

  const Index keep = std::min(raw, target_dim);
  SymmetricEigen eig = raw <= options.jacobi_max_dim ? jacobi_eigen(0.5 * (cov + cov.transpose()))
                                                     : leading_eigen(cov, keep, options.seed);
  out.basis = eig.vectors.leftCols(keep);
  fix_signs(out.basis);
  out.explained_variance = Eigen::VectorXd::Zero(target_dim);
  out.explained_variance.head(keep) = eig.values.head(keep).cwiseMax(0.0);
  return out;
}

DenseMatrix project(const DenseMatrix& x, const ProjectionBasis& basis) {
  if (x.cols() != basis.raw_dim()) {
    throw ShapeError("project: input has " + std::to_string(x.cols()) + " columns, basis expects " +
                     std::to_string(basis.raw_dim()));
  }
  DenseMatrix out = DenseMatrix::Zero(x.rows(), basis.target_dim);
  out.leftCols(basis.basis.cols()) = (x.rowwise() - basis.mean) * basis.basis;
  return out;
}

}  // namespace mdgfm
