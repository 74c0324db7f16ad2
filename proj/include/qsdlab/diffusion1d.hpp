#pragma once

#include <functional>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "qsdlab/expression.hpp"
#include "qsdlab/generator.hpp"
#include "qsdlab/spectral.hpp"

namespace qsdlab {

/// dX = dB − q(X) dt on (r1, r2), killed at rate V(X). Generator ½u'' − q u' − V u.
/// Endpoints may be ±infinity. Construction probes q and V at interior points
/// and rejects non-finite values and negative killing (InvalidInput).
class Diffusion1D {
 public:
  Diffusion1D(double r1, double r2, Expression drift, Expression killing, double anchor);

  double left() const { return r1_; }
  double right() const { return r2_; }
  double anchor() const { return c_; }
  const Expression& drift() const { return q_; }
  const Expression& killing() const { return v_; }

  double q(double x) const { return q_(x); }
  double v(double x) const { return v_(x); }
  bool contains(double x) const { return x > r1_ && x < r2_; }
  /// V ≡ 0, decided on the expression when constant and on probe points otherwise.
  bool killing_vanishes() const;

  /// Interior points used for input guards and identity checks.
  std::vector<double> probe_points(int count = 5) const;

 private:
  double r1_, r2_;
  Expression q_, v_;
  double c_;
};

enum class Side { Left, Right };
enum class BoundaryClass { Regular, Exit, Entrance, Natural };

const char* to_string(BoundaryClass c);
const char* to_string(Side s);

/// Scale and speed of the minimal diffusion relative to the anchor c:
/// s'(x) = exp(B(x)), mdens(x) = 2 exp(−B(x)), B(x) = 2∫_c^x q.
class ScaleSpeed {
 public:
  double log_scale_density(double x) const;  ///< B(x)
  double scale_density(double x) const { return std::exp(log_scale_density(x)); }
  double speed_density(double x) const { return 2.0 * std::exp(-log_scale_density(x)); }
  /// s(x) = ∫_c^x s'(y) dy.
  double scale(double x) const;

  /// Largest relative defect of ½u''−qu' = (1/mdens)(u'/s')' over the probe
  /// points for u = x and u = x².
  double identity_residual() const { return identity_residual_; }

 private:
  friend ScaleSpeed scale_speed_from_drift(const Diffusion1D& d);
  explicit ScaleSpeed(const Diffusion1D& d) : d_(d) {}

  Diffusion1D d_;
  double identity_residual_ = 0.0;
};

/// Throws QuadratureFailure when B is not finite at a probe point or the
/// generator identity fails to 1e-6.
ScaleSpeed scale_speed_from_drift(const Diffusion1D& d);

/// Finiteness verdict of one Feller integral.
struct FellerIntegral {
  bool finite = false;
  double partial_sum = 0.0;
  int blocks = 0;
};

struct BoundaryReport {
  BoundaryClass cls = BoundaryClass::Natural;
  FellerIntegral i;  ///< ∫ M((c,x]) dS(x)
  FellerIntegral j;  ///< ∫ S((c,x]) dM(x)
};

/// Feller class of one endpoint of the minimal diffusion (V is ignored).
/// (I,J) finite/finite → Regular, finite/∞ → Exit, ∞/finite → Entrance,
/// ∞/∞ → Natural. Throws QuadratureInconclusive with the partial sums.
BoundaryReport classify_boundary_report(const Diffusion1D& d, Side endpoint);
BoundaryClass classify_boundary(const Diffusion1D& d, Side endpoint);

struct ClassTReport {
  BoundaryClass left = BoundaryClass::Natural;
  BoundaryClass right = BoundaryClass::Natural;
  bool class_t = false;
  /// class_t and (an endpoint is Regular/Exit or V ≢ 0): the QSD exists.
  bool explosive = false;
};

ClassTReport is_class_t(const Diffusion1D& d);

enum class Closure { Dirichlet, NoFlux };
enum class Spacing { Uniform, Graded };

const char* to_string(Closure c);

struct GridOptions {
  Eigen::Index states = 2000;  ///< interior nodes x_1..x_n
  Spacing spacing = Spacing::Uniform;
  /// Required at infinite endpoints with infinite speed measure.
  std::optional<double> left_cutoff;
  std::optional<double> right_cutoff;
  /// Defaults from the endpoint class: Dirichlet at Regular/Exit, NoFlux otherwise.
  std::optional<Closure> left_closure;
  std::optional<Closure> right_closure;
  double tail_mass = 1e-8;  ///< relative speed mass left beyond an automatic cutoff
};

/// Nodes x_0 < … < x_{n+1}; x_0 and x_{n+1} are boundary nodes, never states.
/// With Dirichlet the boundary node absorbs; with NoFlux it carries no
/// connection and the adjacent dual cell extends to it.
struct Grid {
  Eigen::VectorXd nodes;
  Eigen::VectorXd cellmass;        ///< n speed masses of the dual cells
  Eigen::VectorXd scale_increments;  ///< n+1 values ∫ s' over [x_k, x_{k+1}]; ∞ at NoFlux ends
  Eigen::VectorXd log_scale;       ///< B(x_i) at the n states
  Closure left = Closure::Dirichlet;
  Closure right = Closure::Dirichlet;
  bool left_truncated = false;     ///< x_0 is a cutoff of an infinite endpoint
  bool right_truncated = false;
  double left_tail_bound = 0.0;    ///< relative speed mass beyond the cutoff
  double right_tail_bound = 0.0;

  Eigen::Index states() const { return cellmass.size(); }
  /// x_1..x_n
  Eigen::VectorXd interior() const { return nodes.segment(1, states()); }
};

/// Throws GridTooCoarse (n < 8), InvalidBoundaryClosure (Dirichlet at an
/// Entrance endpoint), InvalidInput (missing cutoff where the speed measure is
/// infinite).
Grid make_grid(const Diffusion1D& d, const GridOptions& options = {});

/// Finite-volume generator on the grid states:
/// Q_{i,i±1} = 1/(cellmass_i Δs_{i±1/2}), killing V(x_i) plus Dirichlet flux.
ReversibleGenerator discretize(const Diffusion1D& d, const Grid& g);

/// States whose node lies in [lo, hi].
StateSet states_between(const Grid& g, double lo, double hi);

struct TightnessProfile {
  Eigen::VectorXd values;  ///< (I − Q)⁻¹ 1_{K^c}
  double sup = 0.0;
};

TightnessProfile tightness_profile(const ReversibleGenerator& g, const StateSet& k);

struct QsdDensityOptions {
  bool refinement_check = false;      ///< also solve on n/2 and 2n states
  bool truncation_check = true;       ///< re-solve with doubled cutoffs
};

struct QsdDensity {
  QsdVector qsd;
  PrincipalEigenpair eig;
  Grid grid;
  Eigen::VectorXd nodes;    ///< x_1..x_n
  Eigen::VectorXd density;  ///< φ₀(x_i) mdens(x_i) / ∫ φ₀ dm
  /// Refinement check: L¹ distance of the n and 2n densities, the order-2
  /// prediction e(n/2,n)/4, and whether the distance is within 4× the prediction.
  std::optional<double> refinement_difference;
  std::optional<double> richardson_prediction;
  bool refinement_consistent = true;
  /// |λ₀(doubled cutoffs) − λ₀| when an infinite endpoint was truncated.
  std::optional<double> truncation_sensitivity;
};

/// Throws NotClassT or NotExplosive before any discretization.
QsdDensity qsd_density(const Diffusion1D& d, const GridOptions& grid = {},
                       const QsdDensityOptions& options = {});

/// Trapezoidal L¹ distance over the nodes of `a`; `b` is linearly
/// interpolated onto them and held constant beyond its own node range.
double density_l1_distance(const Eigen::VectorXd& a_nodes, const Eigen::VectorXd& a,
                           const Eigen::VectorXd& b_nodes, const Eigen::VectorXd& b);

}  // namespace qsdlab
