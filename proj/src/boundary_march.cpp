#include "boundary_march.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/quadrature/gauss.hpp>

namespace qsdlab::detail {

BoundaryMarch::BoundaryMarch(std::function<double(double)> q, double c, double b)
    : q_(std::move(q)), c_(c), b_(b), finite_(std::isfinite(b)) {}

double BoundaryMarch::position(double u) const {
  if (finite_) return b_ - (b_ - c_) * std::exp(-u);
  const double scale = std::max(1.0, std::abs(c_));
  return c_ + scale * std::expm1(u);
}

std::vector<BoundaryMarch::Substep> BoundaryMarch::next_block() {
  std::vector<Substep> out;
  out.reserve(kSubsteps);
  const double du = 1.0 / kSubsteps;
  for (int k = 0; k < kSubsteps; ++k) {
    const double u0 = block_ + k * du;
    const double x0 = position(u0);
    const double x1 = position(u0 + du);
    if (!(x1 > x0)) return {};
    const double db = 2.0 * boost::math::quadrature::gauss<double, 7>::integrate(q_, x0, x1);
    out.push_back({x0, x1, b_acc_, db});
    b_acc_ += db;
  }
  ++block_;
  return out;
}

SeriesVerdict SeriesMonitor::add(double a) {
  if (verdict_ != SeriesVerdict::Undecided) return verdict_;
  terms_.push_back(a);
  sum_ += a;
  if (!std::isfinite(sum_) || !std::isfinite(a) || sum_ > 1e12) return verdict_ = SeriesVerdict::Divergent;

  const auto ratio = [&](std::size_t k) {
    const double prev = terms_[k - 1];
    if (prev == 0.0) return terms_[k] == 0.0 ? 0.0 : HUGE_VAL;
    return terms_[k] / prev;
  };
  const std::size_t n = terms_.size();
  if (n >= 5) {
    bool growing = true;
    for (std::size_t k = n - 4; k < n; ++k) growing = growing && ratio(k) >= 0.97;
    if (growing) return verdict_ = SeriesVerdict::Divergent;
  }
  if (n >= 4) {
    double rho = 0.0;
    for (std::size_t k = n - 3; k < n; ++k) rho = std::max(rho, ratio(k));
    if (rho <= 0.9) {
      const double tail = a * rho / (1.0 - rho);
      if (tail <= 1e-9 * sum_) {
        tail_ = tail;
        return verdict_ = SeriesVerdict::Convergent;
      }
    }
  }
  return verdict_;
}

double expm1_ratio(double d) {
  if (std::abs(d) < 1e-8) return 1.0 + 0.5 * d;
  return std::expm1(d) / d;
}

}  // namespace qsdlab::detail
