#pragma once

#include <functional>
#include <vector>

namespace qsdlab::detail {

/// Marches from the anchor c toward an endpoint b > c (possibly +inf) in a
/// logarithmic variable u: x = b − (b−c)e^{−u} for finite b, x = c + L(e^u − 1)
/// otherwise. Blocks have Δu = 1 split into substeps; over a substep the log
/// scale density B = 2∫q is treated as linear, which makes the exponential
/// updates below exact for piecewise-constant q.
///
/// Left endpoints are handled by the caller through w = −x, q̃(w) = −q(−w).
class BoundaryMarch {
 public:
  static constexpr int kSubsteps = 32;
  static constexpr int kMaxBlocks = 80;

  BoundaryMarch(std::function<double(double)> q, double c, double b);

  struct Substep {
    double x0, x1;  ///< positions
    double b0, db;  ///< B(x0) relative to c, and B(x1) − B(x0)
  };

  /// Next block of substeps; empty once x can no longer advance (x rounded onto b).
  std::vector<Substep> next_block();
  int blocks() const { return block_; }

 private:
  double position(double u) const;

  std::function<double(double)> q_;
  double c_, b_;
  bool finite_;
  int block_ = 0;
  double b_acc_ = 0.0;
};

enum class SeriesVerdict { Undecided, Convergent, Divergent };

/// Decides convergence of a series of nonnegative block contributions:
/// divergent when the running sum exceeds 1e12, turns non-finite, or the last
/// four block ratios are all ≥ 0.97; convergent when the last three ratios are
/// ≤ 0.9 and the geometric tail is ≤ 1e-9 of the sum.
class SeriesMonitor {
 public:
  SeriesVerdict add(double block_contribution);
  double sum() const { return sum_; }
  /// Geometric tail estimate after convergence.
  double tail() const { return tail_; }

 private:
  std::vector<double> terms_;
  double sum_ = 0.0;
  double tail_ = 0.0;
  SeriesVerdict verdict_ = SeriesVerdict::Undecided;
};

/// (e^{d} − 1)/d with the removable singularity at 0.
double expm1_ratio(double d);

}  // namespace qsdlab::detail
