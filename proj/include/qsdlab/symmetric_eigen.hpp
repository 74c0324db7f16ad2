#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace qsdlab {

/// Ascending eigenvalues and orthonormal eigenvectors (columns) of a real
/// symmetric matrix.
struct SymmetricEigen {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
};

/// Full decomposition. Tridiagonal input is routed to the tridiagonal
/// divide-and-conquer driver, anything else to the dense one.
SymmetricEigen symmetric_eigen(const Eigen::MatrixXd& s);

/// The `count` smallest eigenpairs only.
SymmetricEigen symmetric_eigen_lowest(const Eigen::MatrixXd& s, int count);

/// Same, by shift-and-invert inverse iteration on a sparse symmetric matrix.
/// `count` is 1 or 2 (the second pair is found by deflation).
SymmetricEigen sparse_symmetric_eigen_lowest(const Eigen::SparseMatrix<double>& s, int count,
                                             double tolerance = 1e-12, int max_iterations = 5000);

bool is_tridiagonal(const Eigen::MatrixXd& s);

}  // namespace qsdlab
