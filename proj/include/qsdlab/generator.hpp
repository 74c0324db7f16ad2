#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace qsdlab {

/// Finite-state sub-Markovian rate matrix Q, reversible with respect to the
/// masses m, together with the killing vector kill = -Q·1.
///
/// Only validate_generator() builds one, so every instance satisfies the
/// structural invariants: nonnegative off-diagonal rates, row sums <= 0,
/// m_i Q_ij = m_j Q_ji, and a strongly connected transition graph.
class ReversibleGenerator {
 public:
  Eigen::Index size() const { return rates_.rows(); }
  const Eigen::MatrixXd& rates() const { return rates_; }
  const Eigen::VectorXd& masses() const { return masses_; }
  const Eigen::VectorXd& killing() const { return killing_; }

  /// True when no state has a positive killing rate (relative to the largest rate).
  bool is_conservative() const;

  /// S = M^{1/2} (-Q) M^{-1/2}; symmetric up to rounding.
  Eigen::MatrixXd symmetrized() const;
  Eigen::SparseMatrix<double> symmetrized_sparse() const;

  /// max_ij |Q_ij|, the scale used for relative tolerances.
  double rate_scale() const;

 private:
  friend ReversibleGenerator validate_generator(Eigen::MatrixXd, Eigen::VectorXd, double);
  ReversibleGenerator(Eigen::MatrixXd q, Eigen::VectorXd m, Eigen::VectorXd kill)
      : rates_(std::move(q)), masses_(std::move(m)), killing_(std::move(kill)) {}

  Eigen::MatrixXd rates_;
  Eigen::VectorXd masses_;
  Eigen::VectorXd killing_;
};

/// Checks the standing assumptions and computes the killing vector from the
/// row deficits. `tolerance` is relative to the largest rate.
///
/// Errors: InvalidInput (shape, non-positive or non-finite masses),
/// NegativeRate, PositiveRowSum, NonSymmetric, Reducible.
ReversibleGenerator validate_generator(Eigen::MatrixXd q, Eigen::VectorXd m,
                                       double tolerance = 1e-12);

/// A subset of states {0..n-1}, stored sorted and unique.
class StateSet {
 public:
  StateSet() = default;
  explicit StateSet(std::vector<Eigen::Index> states);

  /// The set {first, ..., last-1}.
  static StateSet range(Eigen::Index first, Eigen::Index last);
  static StateSet all(Eigen::Index n) { return range(0, n); }

  const std::vector<Eigen::Index>& states() const { return states_; }
  bool empty() const { return states_.empty(); }
  bool contains(Eigen::Index i) const;
  StateSet complement(Eigen::Index n) const;

  /// 0/1 vector of length n; throws InvalidInput when an index is out of range.
  Eigen::VectorXd indicator(Eigen::Index n) const;

 private:
  std::vector<Eigen::Index> states_;
};

struct RandomGeneratorOptions {
  double extra_edge_probability = 0.1;  ///< on top of a path backbone
  double min_conductance = 0.05;
  double max_conductance = 1.0;
  double min_mass = 0.5;
  double max_mass = 2.0;
  double killed_fraction = 0.25;  ///< at least one state is always killed
  double max_killing = 1.0;
};

/// Random irreducible reversible generator for property sweeps: symmetric
/// conductances on a path plus random chords, Q_ij = c_ij / m_i.
/// Deterministic in `seed`.
ReversibleGenerator make_random_generator(Eigen::Index n, std::uint64_t seed,
                                          const RandomGeneratorOptions& options = {});

}  // namespace qsdlab
