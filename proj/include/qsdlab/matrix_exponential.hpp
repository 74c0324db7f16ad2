#pragma once

#include <Eigen/Dense>

namespace qsdlab {

/// exp(A) by scaling and squaring with a diagonal Padé approximant of degree
/// 3, 5, 7, 9 or 13 (Higham's 2005 selection thresholds). A trace shift is
/// applied first, which keeps ‖A‖ small for generator matrices whose diagonal
/// is uniformly negative.
///
/// Throws Error{OverflowAtHorizon} when the result is not finite.
Eigen::MatrixXd matrix_exponential(const Eigen::MatrixXd& a);

}  // namespace qsdlab
