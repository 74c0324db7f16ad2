#include "qsdlab/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

#include "qsdlab/error.hpp"
#include "qsdlab/matrix_exponential.hpp"

namespace qsdlab {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kResidualTolerance = 1e-10;
constexpr double kStructuralTolerance = 1e-12;

double scale_of(const ReversibleGenerator& g) { return std::max(g.rate_scale(), 1.0); }

bool use_dense(const ReversibleGenerator& g, EigenMethod method) {
  switch (method) {
    case EigenMethod::Dense: return true;
    case EigenMethod::ShiftInvert: return false;
    case EigenMethod::Auto: break;
  }
  return g.size() <= kDenseEigenLimit;
}

// Lowest `count` eigenpairs of S + diag(extra).
SymmetricEigen lowest_pairs(const ReversibleGenerator& g, const VectorXd& extra, int count,
                            EigenMethod method) {
  if (use_dense(g, method)) {
    MatrixXd s = g.symmetrized();
    s.diagonal() += extra;
    return symmetric_eigen_lowest(s, count);
  }
  Eigen::SparseMatrix<double> s = g.symmetrized_sparse();
  for (Index i = 0; i < g.size(); ++i) s.coeffRef(i, i) += extra(i);
  return sparse_symmetric_eigen_lowest(s, count);
}

// Solves (S + diag(d)) y = b in the symmetrized coordinates, requiring the
// matrix to be positive definite.
VectorXd solve_spd(const ReversibleGenerator& g, const VectorXd& d, const VectorXd& b,
                   ErrorCode failure) {
  const Index n = g.size();
  const double scale = scale_of(g) + d.cwiseAbs().maxCoeff();
  auto smallest_eigenvalue = [&] { return lowest_pairs(g, d, 1, EigenMethod::Auto).values(0); };
  auto fail = [&](double lambda_min) {
    throw Error(failure, "system is not positive definite (smallest eigenvalue " +
                             std::to_string(lambda_min) + ")");
  };

  VectorXd y;
  VectorXd pivots;
  if (n <= kDenseEigenLimit) {
    MatrixXd s = g.symmetrized();
    s.diagonal() += d;
    Eigen::LLT<MatrixXd> llt(s);
    if (llt.info() != Eigen::Success) fail(smallest_eigenvalue());
    pivots = MatrixXd(llt.matrixL()).diagonal().cwiseAbs2();
    y = llt.solve(b);
  } else {
    Eigen::SparseMatrix<double> s = g.symmetrized_sparse();
    for (Index i = 0; i < n; ++i) s.coeffRef(i, i) += d(i);
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(s);
    if (ldlt.info() != Eigen::Success) fail(smallest_eigenvalue());
    pivots = ldlt.vectorD();
    if ((pivots.array() <= 0.0).any()) fail(smallest_eigenvalue());
    y = ldlt.solve(b);
  }
  // A tiny pivot means the matrix is singular to working precision even if
  // the factorization went through.
  if (pivots.minCoeff() <= 1e-13 * scale) {
    const double lambda_min = smallest_eigenvalue();
    if (lambda_min <= 1e-12 * scale) fail(lambda_min);
  }
  if (!y.allFinite()) throw Error(ErrorCode::SingularSystem, "linear solve produced non-finite values");
  return y;
}

// x = M^{-1/2} y where (S + D) y = M^{1/2} f  <=>  (D - Q) x = f.
VectorXd solve_generator_system(const ReversibleGenerator& g, const VectorXd& d, const VectorXd& f,
                                ErrorCode failure) {
  if (f.size() != g.size()) throw Error(ErrorCode::InvalidInput, "vector length does not match generator");
  const VectorXd root = g.masses().cwiseSqrt();
  const VectorXd y = solve_spd(g, d, root.cwiseProduct(f), failure);
  return y.cwiseQuotient(root);
}

double relative_residual(const ReversibleGenerator& g, double lambda, const VectorXd& phi) {
  const VectorXd r = -(g.rates() * phi) - lambda * phi;
  return r.cwiseAbs().maxCoeff() / (scale_of(g) * phi.cwiseAbs().maxCoeff());
}

}  // namespace

PrincipalEigenpair principal_eigenpair(const ReversibleGenerator& g, EigenMethod method) {
  const Index n = g.size();
  const int count = n > 1 ? 2 : 1;
  const SymmetricEigen pairs = lowest_pairs(g, VectorXd::Zero(n), count, method);
  if (pairs.values.size() < count) throw Error(ErrorCode::ConvergenceFailure, "eigen solver returned too few pairs");

  PrincipalEigenpair out;
  out.lambda0 = pairs.values(0);
  VectorXd phi = pairs.vectors.col(0).cwiseQuotient(g.masses().cwiseSqrt());
  if (phi.sum() < 0.0) phi = -phi;
  phi /= std::sqrt(phi.cwiseAbs2().dot(g.masses()));
  if ((phi.array() <= 0.0).any()) {
    throw Error(ErrorCode::NonPositiveGroundState,
                "ground state has a non-positive entry (min " + std::to_string(phi.minCoeff()) + ")");
  }
  out.phi0 = std::move(phi);
  if (count > 1) {
    out.lambda1 = pairs.values(1);
    out.near_degenerate = out.gap() < 1e-8;
  }
  out.residual = relative_residual(g, out.lambda0, out.phi0);
  if (out.residual > kResidualTolerance) {
    throw Error(ErrorCode::ConvergenceFailure,
                "eigen residual " + std::to_string(out.residual) + " above tolerance");
  }
  return out;
}

Semigroup::Semigroup(const ReversibleGenerator& g, SemigroupMethod method) : g_(g), method_(method) {
  if (method_ == SemigroupMethod::Auto) {
    method_ = g.size() <= kPadeSemigroupLimit ? SemigroupMethod::Pade : SemigroupMethod::Spectral;
  }
  if (method_ == SemigroupMethod::Spectral) spectrum_ = symmetric_eigen(g.symmetrized());
}

VectorXd Semigroup::apply(double t, const VectorXd& f) const {
  if (t < 0.0) throw Error(ErrorCode::InvalidInput, "time must be nonnegative");
  if (f.size() != g_.size()) throw Error(ErrorCode::InvalidInput, "vector length does not match generator");
  if (t == 0.0) return f;
  VectorXd out;
  if (method_ == SemigroupMethod::Pade) {
    out = matrix_exponential(t * g_.rates()) * f;
  } else {
    // exp(tQ) = M^{-1/2} U e^{-tΛ} Uᵀ M^{1/2}
    const VectorXd root = g_.masses().cwiseSqrt();
    const VectorXd decay = (-t * spectrum_->values).array().exp();
    const VectorXd coeff = decay.cwiseProduct(spectrum_->vectors.transpose() * root.cwiseProduct(f));
    out = (spectrum_->vectors * coeff).cwiseQuotient(root);
  }
  if (!out.allFinite()) throw Error(ErrorCode::OverflowAtHorizon, "semigroup overflowed");
  return out;
}

VectorXd Semigroup::apply_left(double t, const VectorXd& nu) const {
  // exp(tQ)ᵀ nu = M exp(tQ) M⁻¹ nu by detailed balance (QᵀM = MQ).
  const VectorXd& m = g_.masses();
  return m.cwiseProduct(apply(t, nu.cwiseQuotient(m)));
}

VectorXd semigroup_apply(const ReversibleGenerator& g, double t, const VectorXd& f, SemigroupMethod method) {
  if (t == 0.0) {
    if (f.size() != g.size()) throw Error(ErrorCode::InvalidInput, "vector length does not match generator");
    return f;
  }
  return Semigroup(g, method).apply(t, f);
}

VectorXd resolvent(const ReversibleGenerator& g, double alpha, const VectorXd& f) {
  if (!(alpha > 0.0)) throw Error(ErrorCode::InvalidInput, "alpha must be positive");
  return solve_generator_system(g, VectorXd::Constant(g.size(), alpha), f, ErrorCode::SingularSystem);
}

VectorXd feynman_kac_resolvent(const ReversibleGenerator& g, const StateSet& k, double shift,
                               double beta, const VectorXd& f) {
  if (beta < 0.0) throw Error(ErrorCode::InvalidInput, "beta must be nonnegative");
  const VectorXd d = VectorXd::Constant(g.size(), beta - shift) + k.indicator(g.size());
  return solve_generator_system(g, d, f, ErrorCode::NotPositiveDefinite);
}

double perturbed_principal_eigenvalue(const ReversibleGenerator& g, const StateSet& b, EigenMethod method) {
  return lowest_pairs(g, b.indicator(g.size()), 1, method).values(0);
}

VectorXd exp_lifetime_moments(const ReversibleGenerator& g, double gamma) {
  if (!(gamma >= 0.0)) throw Error(ErrorCode::InvalidInput, "gamma must be nonnegative");
  const Index n = g.size();
  if (gamma == 0.0) return VectorXd::Ones(n);
  const double lambda0 = principal_eigenpair(g).lambda0;
  if (gamma >= lambda0) {
    throw Error(ErrorCode::GammaAtOrAboveLambda0,
                "E[exp(gamma*zeta)] diverges for gamma >= lambda0 = " + std::to_string(lambda0));
  }
  const VectorXd x = solve_generator_system(g, VectorXd::Constant(n, -gamma), VectorXd::Ones(n),
                                            ErrorCode::GammaAtOrAboveLambda0);
  return VectorXd::Ones(n) + gamma * x;
}

double exp_lifetime_moment(const ReversibleGenerator& g, double gamma, Index x) {
  if (x < 0 || x >= g.size()) throw Error(ErrorCode::InvalidInput, "state index out of range");
  return exp_lifetime_moments(g, gamma)(x);
}

QsdVector qsd(const ReversibleGenerator& g, const PrincipalEigenpair& eig) {
  if (g.is_conservative()) throw Error(ErrorCode::ConservativeChain, "no state is killed; there is no QSD");
  VectorXd nu = eig.phi0.cwiseProduct(g.masses());
  nu /= nu.sum();
  return {std::move(nu)};
}

QsdVector qsd(const ReversibleGenerator& g) {
  if (g.is_conservative()) throw Error(ErrorCode::ConservativeChain, "no state is killed; there is no QSD");
  return qsd(g, principal_eigenpair(g));
}

double survival_probability(const Semigroup& p, double t, const VectorXd& nu) {
  return p.apply_left(t, nu).sum();
}

QsdVector conditional_law(const Semigroup& p, const VectorXd& nu, double t) {
  if ((nu.array() < 0.0).any() || std::abs(nu.sum() - 1.0) > 1e-12 * static_cast<double>(nu.size())) {
    throw Error(ErrorCode::InvalidInput, "initial law must be a probability vector");
  }
  if (t == 0.0) return {nu};
  VectorXd law = p.apply_left(t, nu);
  const double mass = law.sum();
  if (!(mass >= 1e-300)) throw Error(ErrorCode::ExtinctMass, "surviving mass below 1e-300");
  law /= mass;
  return {std::move(law)};
}

QsdVector conditional_law(const ReversibleGenerator& g, const VectorXd& nu, double t) {
  return conditional_law(Semigroup(g), nu, t);
}

DoobGenerator doob_transform(const ReversibleGenerator& g, const PrincipalEigenpair& eig) {
  const Index n = g.size();
  if (eig.phi0.size() != n) throw Error(ErrorCode::InconsistentEigenpair, "eigenvector length mismatch");
  if ((eig.phi0.array() <= 0.0).any()) throw Error(ErrorCode::InconsistentEigenpair, "ground state must be positive");
  const double scale = scale_of(g);
  const VectorXd& phi = eig.phi0;

  DoobGenerator out;
  out.rates = phi.cwiseInverse().asDiagonal() * g.rates() * phi.asDiagonal();
  // Rows sum to zero exactly; the difference from Q_ii + λ0 is the eigen
  // residual and is reported separately.
  double consistency = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double raw = g.rates()(i, i) + eig.lambda0;
    out.rates(i, i) = 0.0;
    out.rates(i, i) = -out.rates.row(i).sum();
    consistency = std::max(consistency, std::abs(out.rates(i, i) - raw));
  }
  out.eigen_consistency = consistency / scale;
  if (out.eigen_consistency > kResidualTolerance) {
    throw Error(ErrorCode::InconsistentEigenpair,
                "eigenpair residual " + std::to_string(out.eigen_consistency) + " exceeds tolerance");
  }
  out.masses = phi.cwiseAbs2().cwiseProduct(g.masses());

  out.max_row_sum = out.rates.rowwise().sum().cwiseAbs().maxCoeff() / scale;
  const double mass_scale = out.masses.maxCoeff();
  double defect = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      defect = std::max(defect, std::abs(out.masses(i) * out.rates(i, j) - out.masses(j) * out.rates(j, i)));
    }
  }
  out.max_balance_defect = defect / (mass_scale * scale);
  return out;
}

namespace {

// -(Mh^{1/2} Qh Mh^{-1/2}), symmetrized; Qh is reversible with respect to mh.
MatrixXd symmetrized_doob(const DoobGenerator& dg, const VectorXd& root) {
  MatrixXd s = -(root.asDiagonal() * dg.rates * root.cwiseInverse().asDiagonal());
  return 0.5 * (s + s.transpose());
}

}  // namespace

double semigroup_intertwining_check(const ReversibleGenerator& g, const PrincipalEigenpair& eig, double t,
                                    const VectorXd& f, SemigroupMethod method) {
  if (t < 0.0) throw Error(ErrorCode::InvalidInput, "time must be nonnegative");
  if (t == 0.0) return 0.0;
  const DoobGenerator dg = doob_transform(g, eig);
  if (method == SemigroupMethod::Auto) {
    method = g.size() <= kPadeSemigroupLimit ? SemigroupMethod::Pade : SemigroupMethod::Spectral;
  }
  const VectorXd u = f.cwiseQuotient(eig.phi0);
  VectorXd lhs, hu;
  if (method == SemigroupMethod::Pade) {
    lhs = matrix_exponential(t * g.rates()) * f;
    hu = matrix_exponential(t * dg.rates) * u;
  } else {
    // Two separate decompositions: S from Q, and the symmetrization of Qh
    // formed from the transformed rates.
    lhs = Semigroup(g, SemigroupMethod::Spectral).apply(t, f);
    const VectorXd root = dg.masses.cwiseSqrt();
    const SymmetricEigen spec = symmetric_eigen(symmetrized_doob(dg, root));
    const VectorXd decay = (-t * spec.values).array().exp();
    hu = (spec.vectors * decay.cwiseProduct(spec.vectors.transpose() * root.cwiseProduct(u))).cwiseQuotient(root);
  }
  const VectorXd rhs = std::exp(-eig.lambda0 * t) * eig.phi0.cwiseProduct(hu);
  return (lhs - rhs).cwiseAbs().maxCoeff();
}

ErgodicLimit ergodic_limit(const DoobGenerator& dg, const VectorXd& f, double t) {
  const Index n = dg.rates.rows();
  if (f.size() != n) throw Error(ErrorCode::InvalidInput, "vector length does not match generator");
  if (t < 0.0) throw Error(ErrorCode::InvalidInput, "time must be nonnegative");
  const double scale = std::max(dg.rates.cwiseAbs().maxCoeff(), 1.0);
  if (dg.rates.rowwise().sum().cwiseAbs().maxCoeff() > kStructuralTolerance * scale) {
    throw Error(ErrorCode::NotConservative, "rows of the transformed generator do not sum to zero");
  }
  const VectorXd root = dg.masses.cwiseSqrt();
  const MatrixXd s = symmetrized_doob(dg, root);

  ErgodicLimit out;
  out.limit = f.dot(dg.masses) / dg.masses.sum();
  if (n <= kPadeSemigroupLimit) {
    out.value = t == 0.0 ? f : VectorXd(matrix_exponential(t * dg.rates) * f);
    out.gap = n > 1 ? symmetric_eigen_lowest(s, 2).values(1) : 0.0;
  } else {
    const SymmetricEigen spec = symmetric_eigen(s);
    const VectorXd decay = (-t * spec.values).array().exp();
    out.value = (spec.vectors * decay.cwiseProduct(spec.vectors.transpose() * root.cwiseProduct(f)))
                    .cwiseQuotient(root);
    out.gap = spec.values(1);
  }
  out.distance = (out.value.array() - out.limit).abs().maxCoeff();
  return out;
}

UniquenessReport uniqueness_check(const ReversibleGenerator& g) {
  if (g.is_conservative()) throw Error(ErrorCode::ConservativeChain, "no state is killed; there is no QSD");
  const Index n = g.size();
  Eigen::EigenSolver<MatrixXd> solver(g.rates().transpose());
  if (solver.info() != Eigen::Success) throw Error(ErrorCode::ConvergenceFailure, "general eigen solver failed");

  UniquenessReport report;
  report.eigenvector_count = static_cast<int>(n);
  for (Index k = 0; k < n; ++k) {
    const std::complex<double> mu = solver.eigenvalues()(k);
    Eigen::VectorXcd v = solver.eigenvectors().col(k);
    // Fix the complex phase so the largest entry is real and positive.
    Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    v *= std::conj(v(arg)) / std::abs(v(arg));
    const double vmax = v.cwiseAbs().maxCoeff();
    if (std::abs(mu.imag()) > 1e-10 * scale_of(g) || v.imag().cwiseAbs().maxCoeff() > 1e-8 * vmax) continue;
    const VectorXd re = v.real();
    if (re.minCoeff() >= -1e-10 * vmax) {
      ++report.nonnegative_count;
      report.eigenvector = re / re.sum();
      report.eigenvalue = -mu.real();
    }
  }
  if (report.nonnegative_count != 1) {
    throw Error(ErrorCode::MultipleNonnegativeEigenvectors,
                "found " + std::to_string(report.nonnegative_count) + " nonnegative left eigenvectors");
  }
  report.distance_to_qsd = (report.eigenvector - qsd(g).nu).cwiseAbs().maxCoeff();
  return report;
}

}  // namespace qsdlab
