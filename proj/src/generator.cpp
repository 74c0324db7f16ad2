#include "qsdlab/generator.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "qsdlab/error.hpp"

namespace qsdlab {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

double ReversibleGenerator::rate_scale() const {
  return rates_.size() == 0 ? 0.0 : rates_.cwiseAbs().maxCoeff();
}

bool ReversibleGenerator::is_conservative() const {
  const double tol = 1e-12 * std::max(rate_scale(), 1.0);
  return (killing_.array() <= tol).all();
}

MatrixXd ReversibleGenerator::symmetrized() const {
  const VectorXd root = masses_.cwiseSqrt();
  MatrixXd s = -(root.asDiagonal() * rates_ * root.cwiseInverse().asDiagonal());
  return 0.5 * (s + s.transpose());
}

Eigen::SparseMatrix<double> ReversibleGenerator::symmetrized_sparse() const {
  const Index n = size();
  const VectorXd root = masses_.cwiseSqrt();
  std::vector<Eigen::Triplet<double>> entries;
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < n; ++i) {
      if (rates_(i, j) == 0.0 && rates_(j, i) == 0.0) continue;
      const double sij = -rates_(i, j) * root(i) / root(j);
      const double sji = -rates_(j, i) * root(j) / root(i);
      entries.emplace_back(i, j, 0.5 * (sij + sji));
    }
  }
  Eigen::SparseMatrix<double> s(n, n);
  s.setFromTriplets(entries.begin(), entries.end());
  return s;
}

namespace {

bool strongly_connected(const MatrixXd& q) {
  const Index n = q.rows();
  auto reach_all = [&](bool transpose) {
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    std::vector<Index> stack{0};
    seen[0] = 1;
    Index count = 1;
    while (!stack.empty()) {
      const Index i = stack.back();
      stack.pop_back();
      for (Index j = 0; j < n; ++j) {
        const double rate = transpose ? q(j, i) : q(i, j);
        if (j != i && rate > 0.0 && !seen[static_cast<std::size_t>(j)]) {
          seen[static_cast<std::size_t>(j)] = 1;
          ++count;
          stack.push_back(j);
        }
      }
    }
    return count == n;
  };
  return reach_all(false) && reach_all(true);
}

std::string entry(Index i, Index j) {
  std::ostringstream os;
  os << "(" << i << "," << j << ")";
  return os.str();
}

}  // namespace

ReversibleGenerator validate_generator(MatrixXd q, VectorXd m, double tolerance) {
  const Index n = q.rows();
  if (n == 0 || q.cols() != n) throw Error(ErrorCode::InvalidInput, "Q must be square and non-empty");
  if (m.size() != n) throw Error(ErrorCode::InvalidInput, "m and Q dimensions disagree");
  if (!q.allFinite() || !m.allFinite()) throw Error(ErrorCode::InvalidInput, "non-finite entries");
  if ((m.array() <= 0.0).any()) throw Error(ErrorCode::InvalidInput, "masses must be strictly positive");

  const double scale = std::max(q.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  const double tol = tolerance * scale;

  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (i != j && q(i, j) < 0.0) {
        if (q(i, j) < -tol) throw Error(ErrorCode::NegativeRate, "Q" + entry(i, j) + " < 0");
        q(i, j) = 0.0;
      }
    }
  }

  VectorXd kill = -q.rowwise().sum();
  for (Index i = 0; i < n; ++i) {
    if (kill(i) < -tol) {
      throw Error(ErrorCode::PositiveRowSum, "row " + std::to_string(i) + " sums to " +
                                                 std::to_string(-kill(i)));
    }
    kill(i) = std::max(kill(i), 0.0);
  }

  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const double lhs = m(i) * q(i, j);
      const double rhs = m(j) * q(j, i);
      const double size = std::max({std::abs(lhs), std::abs(rhs), m(i) * tol, m(j) * tol});
      if (std::abs(lhs - rhs) > tolerance * size) {
        throw Error(ErrorCode::NonSymmetric, "m_i Q_ij != m_j Q_ji at " + entry(i, j));
      }
    }
  }

  if (n > 1 && !strongly_connected(q)) throw Error(ErrorCode::Reducible, "transition graph is not strongly connected");

  return ReversibleGenerator(std::move(q), std::move(m), std::move(kill));
}

StateSet::StateSet(std::vector<Index> states) : states_(std::move(states)) {
  std::sort(states_.begin(), states_.end());
  states_.erase(std::unique(states_.begin(), states_.end()), states_.end());
}

StateSet StateSet::range(Index first, Index last) {
  std::vector<Index> s;
  for (Index i = first; i < last; ++i) s.push_back(i);
  return StateSet(std::move(s));
}

bool StateSet::contains(Index i) const { return std::binary_search(states_.begin(), states_.end(), i); }

StateSet StateSet::complement(Index n) const {
  std::vector<Index> s;
  for (Index i = 0; i < n; ++i) {
    if (!contains(i)) s.push_back(i);
  }
  return StateSet(std::move(s));
}

VectorXd StateSet::indicator(Index n) const {
  VectorXd v = VectorXd::Zero(n);
  for (Index i : states_) {
    if (i < 0 || i >= n) throw Error(ErrorCode::InvalidInput, "state index out of range");
    v(i) = 1.0;
  }
  return v;
}

ReversibleGenerator make_random_generator(Index n, std::uint64_t seed,
                                          const RandomGeneratorOptions& options) {
  if (n < 1) throw Error(ErrorCode::InvalidInput, "n must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  VectorXd m(n);
  for (Index i = 0; i < n; ++i) m(i) = uniform(options.min_mass, options.max_mass);

  MatrixXd c = MatrixXd::Zero(n, n);
  for (Index i = 0; i + 1 < n; ++i) {
    c(i, i + 1) = c(i + 1, i) = uniform(options.min_conductance, options.max_conductance);
  }
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 2; j < n; ++j) {
      if (unit(rng) < options.extra_edge_probability) {
        c(i, j) = c(j, i) = uniform(options.min_conductance, options.max_conductance);
      }
    }
  }

  VectorXd kill = VectorXd::Zero(n);
  const auto forced = static_cast<Index>(std::min<double>(static_cast<double>(n) - 1.0, unit(rng) * static_cast<double>(n)));
  for (Index i = 0; i < n; ++i) {
    if (i == forced || unit(rng) < options.killed_fraction) kill(i) = uniform(0.05, 1.0) * options.max_killing;
  }

  MatrixXd q = MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (i != j) q(i, j) = c(i, j) / m(i);
    }
    q(i, i) = -q.row(i).sum() - kill(i);
  }
  return validate_generator(std::move(q), std::move(m));
}

}  // namespace qsdlab
