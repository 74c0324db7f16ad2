#include "qsdlab/symmetric_eigen.hpp"

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/SparseCholesky>

#include "qsdlab/error.hpp"

namespace qsdlab {

using Eigen::MatrixXd;
using Eigen::VectorXd;

bool is_tridiagonal(const MatrixXd& s) {
  const auto n = s.rows();
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if ((i > j + 1 || j > i + 1) && s(i, j) != 0.0) return false;
    }
  }
  return true;
}

namespace {

void check_info(lapack_int info, const char* routine) {
  if (info != 0) {
    throw Error(ErrorCode::ConvergenceFailure,
                std::string(routine) + " failed with info=" + std::to_string(info));
  }
}

SymmetricEigen tridiagonal_range(const MatrixXd& s, int count) {
  const auto n = static_cast<lapack_int>(s.rows());
  VectorXd diag = s.diagonal();
  VectorXd off(std::max<lapack_int>(n, 1));
  for (lapack_int i = 0; i + 1 < n; ++i) off(i) = 0.5 * (s(i, i + 1) + s(i + 1, i));
  lapack_int found = 0;
  VectorXd w(n);
  MatrixXd z(n, count);
  std::vector<lapack_int> support(2 * static_cast<std::size_t>(std::max(count, 1)));
  const lapack_int info =
      LAPACKE_dstevr(LAPACK_COL_MAJOR, 'V', 'I', n, diag.data(), off.data(), 0.0, 0.0, 1, count,
                     0.0, &found, w.data(), z.data(), n, support.data());
  check_info(info, "dstevr");
  return {w.head(found), z.leftCols(found)};
}

SymmetricEigen dense_range(const MatrixXd& s, int count) {
  const auto n = static_cast<lapack_int>(s.rows());
  MatrixXd a = 0.5 * (s + s.transpose());
  lapack_int found = 0;
  VectorXd w(n);
  MatrixXd z(n, count);
  std::vector<lapack_int> support(2 * static_cast<std::size_t>(std::max(count, 1)));
  const lapack_int info = LAPACKE_dsyevr(LAPACK_COL_MAJOR, 'V', 'I', 'L', n, a.data(), n, 0.0, 0.0,
                                         1, count, 0.0, &found, w.data(), z.data(), n,
                                         support.data());
  check_info(info, "dsyevr");
  return {w.head(found), z.leftCols(found)};
}

}  // namespace

SymmetricEigen symmetric_eigen(const MatrixXd& s) {
  const auto n = static_cast<lapack_int>(s.rows());
  if (n == 0) return {};
  if (is_tridiagonal(s)) {
    VectorXd diag = s.diagonal();
    VectorXd off(std::max<lapack_int>(n - 1, 1));
    for (lapack_int i = 0; i + 1 < n; ++i) off(i) = 0.5 * (s(i, i + 1) + s(i + 1, i));
    MatrixXd z(n, n);
    check_info(LAPACKE_dstevd(LAPACK_COL_MAJOR, 'V', n, diag.data(), off.data(), z.data(), n),
               "dstevd");
    return {diag, z};
  }
  MatrixXd a = 0.5 * (s + s.transpose());
  VectorXd w(n);
  check_info(LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'L', n, a.data(), n, w.data()), "dsyevd");
  return {w, a};
}

SymmetricEigen symmetric_eigen_lowest(const MatrixXd& s, int count) {
  const int n = static_cast<int>(s.rows());
  count = std::clamp(count, 0, n);
  if (count == 0) return {};
  return is_tridiagonal(s) ? tridiagonal_range(s, count) : dense_range(s, count);
}

SymmetricEigen sparse_symmetric_eigen_lowest(const Eigen::SparseMatrix<double>& s, int count,
                                             double tolerance, int max_iterations) {
  const auto n = s.rows();
  count = std::clamp<int>(count, 0, std::min<int>(2, static_cast<int>(n)));
  SymmetricEigen out;
  out.values.resize(count);
  out.vectors.resize(n, count);
  if (count == 0) return out;

  // Gershgorin lower bound keeps the shifted matrix positive definite.
  double lower = std::numeric_limits<double>::infinity();
  double scale = 0.0;
  for (Eigen::Index k = 0; k < s.outerSize(); ++k) {
    double diag = 0.0;
    double off = 0.0;
    for (Eigen::SparseMatrix<double>::InnerIterator it(s, k); it; ++it) {
      if (it.row() == it.col()) {
        diag = it.value();
      } else {
        off += std::abs(it.value());
      }
    }
    lower = std::min(lower, diag - off);
    scale = std::max(scale, std::abs(diag) + off);
  }
  const double shift = lower - 1e-8 * scale - std::numeric_limits<double>::min();

  Eigen::SparseMatrix<double> shifted = s;
  for (Eigen::Index i = 0; i < n; ++i) shifted.coeffRef(i, i) -= shift;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(shifted);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorCode::ConvergenceFailure, "shift-and-invert factorization failed");
  }

  for (int pair = 0; pair < count; ++pair) {
    VectorXd x = VectorXd::Ones(n);
    if (pair > 0) {
      // Any vector with a component orthogonal to the first eigenvector.
      for (Eigen::Index i = 0; i < n; ++i) x(i) = std::cos(3.0 * static_cast<double>(i) + 1.0);
    }
    auto deflate = [&](VectorXd& v) {
      for (int p = 0; p < pair; ++p) v -= out.vectors.col(p).dot(v) * out.vectors.col(p);
    };
    deflate(x);
    x.normalize();
    bool converged = false;
    double theta = 0.0;
    for (int it = 0; it < max_iterations; ++it) {
      VectorXd y = solver.solve(x);
      deflate(y);
      x = y.normalized();
      const VectorXd sx = s * x;
      theta = x.dot(sx);
      if ((sx - theta * x).norm() <= tolerance * std::max(scale, 1.0)) {
        converged = true;
        break;
      }
    }
    if (!converged) {
      throw Error(ErrorCode::ConvergenceFailure, "inverse iteration did not converge");
    }
    out.values(pair) = theta;
    out.vectors.col(pair) = x;
  }
  return out;
}

}  // namespace qsdlab
