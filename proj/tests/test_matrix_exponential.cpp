#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "doctest.h"
#include "qsdlab/error.hpp"
#include "qsdlab/matrix_exponential.hpp"

using Eigen::MatrixXd;
using qsdlab::matrix_exponential;

namespace {

// Oracle: Taylor series in long double with scaling and squaring by hand.
MatrixXd taylor_exponential(const MatrixXd& a) {
  using MatL = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  const double norm = a.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = norm > 0.5 ? static_cast<int>(std::ceil(std::log2(norm / 0.5))) : 0;
  MatL x = a.cast<long double>() / std::ldexp(1.0L, squarings);
  MatL term = MatL::Identity(a.rows(), a.cols());
  MatL sum = term;
  for (int k = 1; k < 40; ++k) {
    term = term * x / static_cast<long double>(k);
    sum += term;
  }
  for (int k = 0; k < squarings; ++k) sum = sum * sum;
  return sum.cast<double>();
}

MatrixXd random_matrix(int n, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = scale * normal(rng);
  return a;
}

}  // namespace

TEST_CASE("zero matrix gives identity") {
  const MatrixXd e = matrix_exponential(MatrixXd::Zero(4, 4));
  CHECK((e - MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("scalar exponential") {
  for (double x : {-30.0, -2.5, 0.0, 1e-3, 0.7, 4.0}) {
    MatrixXd a(1, 1);
    a(0, 0) = x;
    CHECK(matrix_exponential(a)(0, 0) == doctest::Approx(std::exp(x)).epsilon(1e-14));
  }
}

TEST_CASE("agrees with a long-double Taylor oracle across all Pade degrees") {
  std::mt19937_64 rng(7);
  // Norms chosen to land in each degree band, including several squarings.
  for (double scale : {1e-3, 0.02, 0.1, 0.3, 0.6, 2.0, 8.0}) {
    for (int rep = 0; rep < 5; ++rep) {
      const MatrixXd a = random_matrix(6, scale, rng);
      const MatrixXd expected = taylor_exponential(a);
      const double err = (matrix_exponential(a) - expected).cwiseAbs().maxCoeff();
      CHECK(err <= 1e-12 * std::max(1.0, expected.cwiseAbs().maxCoeff()));
    }
  }
}

TEST_CASE("symmetric input matches the eigendecomposition route") {
  std::mt19937_64 rng(11);
  MatrixXd a = random_matrix(8, 1.5, rng);
  a = (0.5 * (a + a.transpose())).eval();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(a);
  const MatrixXd expected =
      es.eigenvectors() * es.eigenvalues().array().exp().matrix().asDiagonal() * es.eigenvectors().transpose();
  CHECK((matrix_exponential(a) - expected).cwiseAbs().maxCoeff() <= 1e-12 * expected.cwiseAbs().maxCoeff());
}

TEST_CASE("semigroup property exp(2A) = exp(A)^2") {
  std::mt19937_64 rng(3);
  const MatrixXd a = random_matrix(5, 1.0, rng);
  const MatrixXd once = matrix_exponential(a);
  const MatrixXd twice = matrix_exponential(2.0 * a);
  CHECK((once * once - twice).cwiseAbs().maxCoeff() <= 1e-11 * twice.cwiseAbs().maxCoeff());
}

TEST_CASE("non-finite input is reported as overflow") {
  MatrixXd a = MatrixXd::Zero(2, 2);
  a(0, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(matrix_exponential(a), qsdlab::Error);
}
