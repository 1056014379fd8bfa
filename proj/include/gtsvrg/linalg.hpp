#pragma once

#include <Eigen/Dense>

#include <cmath>

namespace gtsvrg {

// Stacked network quantities are n x p with one row per node, so a node's
// block is contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Network average (1/n) 1^T x as a 1 x p row.
inline RowVector node_mean(const Matrix& x) { return x.colwise().mean(); }

/// ||x - 1 xbar||_F^2.
inline double consensus_sq(const Matrix& x) {
  return (x.rowwise() - node_mean(x)).squaredNorm();
}

inline bool all_finite(const Matrix& x) { return x.allFinite(); }

inline double max_abs(const Matrix& x) {
  return x.size() == 0 ? 0.0 : x.cwiseAbs().maxCoeff();
}

}  // namespace gtsvrg
