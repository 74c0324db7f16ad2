#pragma once

#include <limits>
#include <optional>

#include <Eigen/Dense>

#include "qsdlab/generator.hpp"
#include "qsdlab/symmetric_eigen.hpp"

namespace qsdlab {

/// Ground state of -Q in L²(m): the smallest eigenvalue and its positive,
/// m-normalized eigenvector (sum phi0_i² m_i = 1).
struct PrincipalEigenpair {
  double lambda0 = 0.0;
  Eigen::VectorXd phi0;
  double lambda1 = std::numeric_limits<double>::quiet_NaN();  ///< NaN for a single state
  double residual = 0.0;           ///< ‖(-Q)phi0 - lambda0 phi0‖∞ / (scale ‖phi0‖∞)
  bool near_degenerate = false;    ///< lambda1 - lambda0 < 1e-8

  double gap() const { return lambda1 - lambda0; }
};

/// Probability vector nu^{phi0}: nu_i ∝ phi0_i m_i.
struct QsdVector {
  Eigen::VectorXd nu;
};

/// Ground-state (Doob) transform Qh = Φ⁻¹QΦ + λ0 I, conservative and
/// reversible with respect to mh = phi0² m.
struct DoobGenerator {
  Eigen::MatrixXd rates;
  Eigen::VectorXd masses;
  double max_row_sum = 0.0;           ///< max_i |Σ_j Qh_ij| / scale
  double max_balance_defect = 0.0;    ///< max_ij |mh_i Qh_ij - mh_j Qh_ji| / (mh scale)
  double eigen_consistency = 0.0;     ///< max_i |(Qphi0)_i/phi0_i + λ0| / scale
};

enum class EigenMethod { Auto, Dense, ShiftInvert };
enum class SemigroupMethod { Auto, Pade, Spectral };

/// Above this size Auto switches dense eigen solves to shift-and-invert.
inline constexpr Eigen::Index kDenseEigenLimit = 2000;
/// Above this size Auto evaluates semigroups through the eigendecomposition.
inline constexpr Eigen::Index kPadeSemigroupLimit = 400;

PrincipalEigenpair principal_eigenpair(const ReversibleGenerator& g,
                                       EigenMethod method = EigenMethod::Auto);

/// p_t = exp(tQ). Keeps the eigendecomposition when the spectral route is
/// used, so repeated applications at different times are cheap.
class Semigroup {
 public:
  explicit Semigroup(const ReversibleGenerator& g, SemigroupMethod method = SemigroupMethod::Auto);

  /// exp(tQ) f
  Eigen::VectorXd apply(double t, const Eigen::VectorXd& f) const;
  /// exp(tQ)ᵀ nu, i.e. the (unnormalized) law at time t from initial law nu.
  Eigen::VectorXd apply_left(double t, const Eigen::VectorXd& nu) const;

  SemigroupMethod method() const { return method_; }

 private:
  ReversibleGenerator g_;
  SemigroupMethod method_;
  std::optional<SymmetricEigen> spectrum_;
};

Eigen::VectorXd semigroup_apply(const ReversibleGenerator& g, double t, const Eigen::VectorXd& f,
                                SemigroupMethod method = SemigroupMethod::Auto);

/// (αI - Q)⁻¹ f.
Eigen::VectorXd resolvent(const ReversibleGenerator& g, double alpha, const Eigen::VectorXd& f);

/// ((β - shift) I + diag(1_K) - Q)⁻¹ f, the resolvent of the semigroup killed
/// at unit rate on K and accelerated by e^{shift·t}.
/// Throws NotPositiveDefinite with the offending smallest eigenvalue.
Eigen::VectorXd feynman_kac_resolvent(const ReversibleGenerator& g, const StateSet& k,
                                      double shift, double beta, const Eigen::VectorXd& f);

/// Smallest eigenvalue of -Q + diag(1_B).
double perturbed_principal_eigenvalue(const ReversibleGenerator& g, const StateSet& b,
                                      EigenMethod method = EigenMethod::Auto);

/// E_x(e^{γζ}) for every state: 1 + γ (-Q - γI)⁻¹ 1.
/// Throws GammaAtOrAboveLambda0 unless 0 <= γ < λ0.
Eigen::VectorXd exp_lifetime_moments(const ReversibleGenerator& g, double gamma);
double exp_lifetime_moment(const ReversibleGenerator& g, double gamma, Eigen::Index x);

/// Throws ConservativeChain when no state is killed.
QsdVector qsd(const ReversibleGenerator& g);
QsdVector qsd(const ReversibleGenerator& g, const PrincipalEigenpair& eig);

/// P_nu(t < ζ) = nuᵀ exp(tQ) 1.
double survival_probability(const Semigroup& p, double t, const Eigen::VectorXd& nu);

/// Law of X_t under P_nu conditioned on survival. Throws ExtinctMass when the
/// surviving mass underflows 1e-300.
QsdVector conditional_law(const Semigroup& p, const Eigen::VectorXd& nu, double t);
QsdVector conditional_law(const ReversibleGenerator& g, const Eigen::VectorXd& nu, double t);

/// Throws InconsistentEigenpair when eig does not solve the eigenproblem of g.
DoobGenerator doob_transform(const ReversibleGenerator& g, const PrincipalEigenpair& eig);

/// ‖exp(tQ)f − e^{−λ0 t} φ0 ⊙ exp(tQh)(f/φ0)‖∞. Pade evaluates both
/// exponentials directly; Spectral uses separate eigendecompositions of Q and
/// Qh. Auto picks Pade up to kPadeSemigroupLimit states.
double semigroup_intertwining_check(const ReversibleGenerator& g, const PrincipalEigenpair& eig,
                                    double t, const Eigen::VectorXd& f,
                                    SemigroupMethod method = SemigroupMethod::Auto);

struct ErgodicLimit {
  Eigen::VectorXd value;   ///< exp(tQh) f
  double limit = 0.0;      ///< mh-average of f
  double distance = 0.0;   ///< ‖value - limit‖∞
  double gap = 0.0;        ///< spectral gap of Qh in L²(mh)
};

/// Throws NotConservative when the rows of Qh do not sum to zero.
ErgodicLimit ergodic_limit(const DoobGenerator& dg, const Eigen::VectorXd& f, double t);

struct UniquenessReport {
  int nonnegative_count = 0;
  int eigenvector_count = 0;
  Eigen::VectorXd eigenvector;     ///< the nonnegative left eigenvector, summing to one
  double eigenvalue = 0.0;         ///< its eigenvalue of -Q
  double distance_to_qsd = 0.0;    ///< ‖eigenvector − qsd(g)‖∞
};

/// Enumerates the left eigenvectors of Q with a general (non-symmetric)
/// eigensolver and checks that exactly one of them is a nonnegative vector.
/// Throws MultipleNonnegativeEigenvectors otherwise.
UniquenessReport uniqueness_check(const ReversibleGenerator& g);

}  // namespace qsdlab
