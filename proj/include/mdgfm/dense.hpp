#pragma once

#include <Eigen/Core>

namespace mdgfm {

template <typename Scalar>
using DenseMatrixT =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVectorT = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using DenseMatrix = DenseMatrixT<double>;
using RowVector = RowVectorT<double>;
using Index = Eigen::Index;

}  // namespace mdgfm
