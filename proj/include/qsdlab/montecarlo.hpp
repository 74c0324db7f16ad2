#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "qsdlab/diffusion1d.hpp"
#include "qsdlab/spectral.hpp"

namespace qsdlab {

struct PathConfig {
  double dt = 1e-3;
  double horizon = 1.0;
  std::int64_t n_paths = 10000;
  std::uint64_t seed = 0;
  bool bridge_correction = true;
  /// Worker threads; results do not depend on this.
  int threads = 1;
  /// Positions of surviving paths are recorded at these times (rounded to the step grid).
  std::vector<double> snapshot_times;

  /// Throws InvalidInput unless dt > 0, horizon >= dt, n_paths >= 1, threads >= 1.
  void validate() const;
};

/// Piecewise-constant law on cells [edges_i, edges_{i+1}).
struct CellLaw {
  Eigen::VectorXd edges;          ///< n+1 increasing values
  Eigen::VectorXd probabilities;  ///< n values summing to one

  /// The QSD on the dual cells of its grid.
  static CellLaw from_qsd(const QsdDensity& q);
  /// Probability of each bin [bin_edges_k, bin_edges_{k+1}).
  Eigen::VectorXd bin_masses(const Eigen::VectorXd& bin_edges) const;
};

/// Either a point or a cell law.
struct InitialLaw {
  std::optional<double> point;
  std::optional<CellLaw> law;

  static InitialLaw at(double x) { return {x, std::nullopt}; }
  static InitialLaw from(CellLaw l) { return {std::nullopt, std::move(l)}; }
};

enum class PathFate : std::uint8_t { Censored, Killed, Absorbed };

struct PathEnsemble {
  /// ζ per path; censored paths carry the horizon.
  Eigen::VectorXd lifetimes;
  std::vector<PathFate> fates;
  double horizon = 0.0;
  double dt = 0.0;
  std::vector<double> snapshot_times;
  /// Per snapshot time, positions of the paths alive then, in path order.
  std::vector<std::vector<double>> snapshots;

  std::int64_t size() const { return lifetimes.size(); }
  std::int64_t count(PathFate f) const;
  /// Fraction of paths with ζ > t.
  double survival_fraction(double t) const;
  /// Index into snapshot_times; throws InvalidInput when t was not requested.
  std::size_t snapshot_index(double t) const;
};

/// Euler-Maruyama X ← X − q(X)dt + √dt N(0,1) with
/// - killing by thinning at rate V(X) from the step start, the kill time drawn
///   exactly within the step;
/// - absorption at finite Regular/Exit endpoints, with the optional Brownian
///   bridge crossing test exp(−2(x−a)(y−a)/dt);
/// - reflection at other finite endpoints.
/// Paths use Philox substreams keyed by (seed, path index).
///
/// Errors: InvalidInput (config), InitOutsideDomain, StepTooLarge
/// (dt·max|q| over probe points > 0.1).
PathEnsemble simulate_killed_paths(const Diffusion1D& d, const InitialLaw& init, const PathConfig& cfg);

struct Histogram {
  Eigen::VectorXd edges;
  Eigen::VectorXd counts;
  Eigen::VectorXd mass;    ///< counts / total
  Eigen::VectorXd std_error;  ///< √(p(1−p)/N)
  std::int64_t total = 0;
};

Histogram make_histogram(const std::vector<double>& samples, const Eigen::VectorXd& edges);

/// Law of the survivors at a snapshot time. Throws TooFewSurvivors below 100.
Histogram empirical_conditional_law(const PathEnsemble& ens, double t, const Eigen::VectorXd& bin_edges);

struct ChiSquareResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
  int merged_bins = 0;  ///< bins after merging those with expected count < 5
};

/// Pearson test of observed counts against bin probabilities.
ChiSquareResult chi_square_test(const Eigen::VectorXd& counts, const Eigen::VectorXd& probabilities);

struct RateEstimate {
  double rate = 0.0;
  double std_error = 0.0;
};

/// Ordinary least-squares slope of −log S(t) at 11 points of the window; the
/// standard error uses the delta-method covariance of log Ŝ.
/// Throws TooFewSurvivors when fewer than 100 paths outlive t2.
RateEstimate survival_rate_estimate(const PathEnsemble& ens, double t1, double t2);

struct MannKendall {
  double s = 0.0;
  double z = 0.0;
  double p_decreasing = 1.0;  ///< one-sided normal approximation
};

MannKendall mann_kendall(const std::vector<double>& values);

struct YaglomOptions {
  Eigen::VectorXd bin_edges;  ///< default: 20 equal bins over the reference support
  int bootstrap = 200;
  double trend_level = 0.05;
};

struct YaglomEstimate {
  std::vector<double> times;
  std::vector<double> tv_distance;   ///< NaN where survivors were too few
  std::vector<double> ci_halfwidth;  ///< bootstrap 95%
  std::vector<double> null_tv95;     ///< 95% TV of a reference-law sample of equal size
  std::vector<std::int64_t> survivors;
  std::vector<bool> too_few_survivors;
  MannKendall trend;
  bool trend_decreasing = false;
};

/// TV distance between the conditioned empirical law and `reference` at each
/// time. Too few survivors at a time is reported, not thrown.
YaglomEstimate yaglom_estimate(const Diffusion1D& d, const InitialLaw& init, const PathConfig& cfg,
                               const CellLaw& reference, const std::vector<double>& times,
                               const YaglomOptions& options = {});

struct MomentEstimate {
  double value = 1.0;
  double std_error = 0.0;
  double censored_fraction = 0.0;
  /// Expected missing contribution of censored paths under an exponential tail.
  double censoring_bias_bound = 0.0;
  double lambda0_estimate = 0.0;
};

/// Tail rate from the deaths after the 90th lifetime percentile (exponential
/// MLE); higher modes have decayed by then for typical starts.
double tail_rate_estimate(const PathEnsemble& ens);

/// Mean of e^{γζ}. Throws GammaTooLarge unless γ < 0.9 λ̂0 (λ̂0 from
/// tail_rate_estimate unless given) and HeavyCensoring when ≥ 1e-3 of the
/// paths are censored.
MomentEstimate exp_zeta_moment_estimate(const PathEnsemble& ens, double gamma,
                                        std::optional<double> lambda0_estimate = std::nullopt);

struct HProcessOptions {
  double burn_in = 100.0;
  double sample_interval = 4.0;  ///< time between the samples used for χ²
  int paths = 1;
  Eigen::VectorXd bin_edges;     ///< default: 20 equal bins over the grid
};

struct HProcessResult {
  Histogram occupation;  ///< time average over [burn_in, horizon], all steps
  Histogram samples;     ///< thinned samples
  std::int64_t steps = 0;
  std::int64_t absorptions = 0;  ///< always 0 on return
};

/// Simulates the ground-state transformed diffusion with drift
/// −q + (log φ0)', the log-derivative taken from a monotone cubic interpolant
/// of log φ0 on the grid and from 1/(x − r) in cells next to Dirichlet ends.
/// Steps within 10√dt of a Dirichlet end are drift-implicit.
///
/// Errors: NonPositivePhi, AbsorptionInHProcess, StepTooLarge, InitOutsideDomain.
HProcessResult doob_paths(const Diffusion1D& d, const Grid& grid, const PrincipalEigenpair& eig, double x0,
                          const PathConfig& cfg, const HProcessOptions& options = {});

/// Equal-width bins over [lo, hi].
Eigen::VectorXd uniform_bins(double lo, double hi, int count);

}  // namespace qsdlab
