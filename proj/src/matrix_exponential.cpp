#include "qsdlab/matrix_exponential.hpp"

#include <array>
#include <cmath>

#include "qsdlab/error.hpp"

namespace qsdlab {
namespace {

using Eigen::MatrixXd;

// Padé numerator coefficients; the denominator uses the same coefficients
// with alternating sign (exp(-A) = 1/exp(A)).
constexpr std::array<double, 4> kPade3 = {120.0, 60.0, 12.0, 1.0};
constexpr std::array<double, 6> kPade5 = {30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0};
constexpr std::array<double, 8> kPade7 = {17297280.0, 8648640.0, 1995840.0, 277200.0,
                                          25200.0,    1512.0,    56.0,      1.0};
constexpr std::array<double, 10> kPade9 = {17643225600.0, 8821612800.0, 2075673600.0, 302702400.0,
                                           30270240.0,    2162160.0,    110880.0,     3960.0,
                                           90.0,          1.0};
constexpr std::array<double, 14> kPade13 = {
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
    129060195264000.0,   10559470521600.0,    670442572800.0,     33522128640.0,
    1323241920.0,        40840800.0,          960960.0,           16380.0,
    182.0,               1.0};

// 1-norm thresholds below which degree m reaches unit roundoff.
constexpr double kTheta3 = 1.495585217958292e-2;
constexpr double kTheta5 = 2.539398330063230e-1;
constexpr double kTheta7 = 9.504178996162932e-1;
constexpr double kTheta9 = 2.097847961257068e0;
constexpr double kTheta13 = 5.371920351148152e0;

double one_norm(const MatrixXd& a) { return a.cwiseAbs().colwise().sum().maxCoeff(); }

// Low-degree approximants: U (odd part) and V (even part) from powers of A².
template <std::size_t N>
void pade_low(const MatrixXd& a, const std::array<double, N>& b, MatrixXd& u, MatrixXd& v) {
  const auto n = a.rows();
  const MatrixXd ident = MatrixXd::Identity(n, n);
  const MatrixXd a2 = a * a;
  MatrixXd odd = b[1] * ident;
  MatrixXd even = b[0] * ident;
  MatrixXd power = ident;
  for (std::size_t k = 2; k < N; k += 2) {
    power = power * a2;
    even += b[k] * power;
    if (k + 1 < N) odd += b[k + 1] * power;
  }
  u = a * odd;
  v = even;
}

void pade13(const MatrixXd& a, MatrixXd& u, MatrixXd& v) {
  const auto n = a.rows();
  const auto& b = kPade13;
  const MatrixXd ident = MatrixXd::Identity(n, n);
  const MatrixXd a2 = a * a;
  const MatrixXd a4 = a2 * a2;
  const MatrixXd a6 = a4 * a2;
  MatrixXd inner = b[13] * a6 + b[11] * a4 + b[9] * a2;
  u = a * (a6 * inner + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident);
  MatrixXd inner_v = b[12] * a6 + b[10] * a4 + b[8] * a2;
  v = a6 * inner_v + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident;
}

}  // namespace

MatrixXd matrix_exponential(const MatrixXd& a_in) {
  const auto n = a_in.rows();
  if (n == 0) return MatrixXd(0, 0);
  if (n != a_in.cols()) throw Error(ErrorCode::InvalidInput, "matrix_exponential needs a square matrix");
  if (!a_in.allFinite()) throw Error(ErrorCode::OverflowAtHorizon, "non-finite matrix entries");

  const double shift = a_in.trace() / static_cast<double>(n);
  MatrixXd a = a_in - shift * MatrixXd::Identity(n, n);
  const double norm = one_norm(a);

  MatrixXd u;
  MatrixXd v;
  int squarings = 0;
  if (norm <= kTheta3) {
    pade_low(a, kPade3, u, v);
  } else if (norm <= kTheta5) {
    pade_low(a, kPade5, u, v);
  } else if (norm <= kTheta7) {
    pade_low(a, kPade7, u, v);
  } else if (norm <= kTheta9) {
    pade_low(a, kPade9, u, v);
  } else {
    if (norm > kTheta13) {
      squarings = static_cast<int>(std::ceil(std::log2(norm / kTheta13)));
      a /= std::ldexp(1.0, squarings);
    }
    pade13(a, u, v);
  }

  // The shift goes in before squaring so that stochastic semigroups at long
  // horizons stay bounded at every intermediate step.
  MatrixXd result = (v - u).partialPivLu().solve(v + u) * std::exp(std::ldexp(shift, -squarings));
  for (int k = 0; k < squarings; ++k) result = result * result;
  if (!result.allFinite()) {
    throw Error(ErrorCode::OverflowAtHorizon, "matrix exponential overflowed");
  }
  return result;
}

}  // namespace qsdlab
