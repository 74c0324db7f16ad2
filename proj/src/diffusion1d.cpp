#include "qsdlab/diffusion1d.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "boundary_march.hpp"
#include "qsdlab/error.hpp"

namespace qsdlab {

namespace {

using boost::math::quadrature::gauss;
using boost::math::quadrature::gauss_kronrod;
using detail::BoundaryMarch;
using detail::SeriesMonitor;
using detail::SeriesVerdict;

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

/// ∫_a^b f, adaptive; throws QuadratureFailure on a non-finite result.
template <class F>
double adaptive(F&& f, double a, double b) {
  if (a == b) return 0.0;
  double error = 0.0;
  const double value = gauss_kronrod<double, 31>::integrate(f, a, b, 15, 1e-13, &error);
  if (!std::isfinite(value)) {
    throw Error(ErrorCode::QuadratureFailure,
                "non-finite integral over [" + format_double(a) + ", " + format_double(b) + "]");
  }
  return value;
}

/// ∫ f(B(y)) dy over the cell between a state node xi, where B(xi) = bi, and
/// the boundary node xe. Dyadic pieces shrink toward xe so that integrable
/// singularities of q or f at the boundary are resolved; B is carried inward
/// piece by piece. Throws QuadratureFailure when the pieces stop shrinking.
template <class Q, class F>
double boundary_cell_integral(const Q& q, double xi, double bi, double xe, F&& f) {
  double total = 0.0;
  double piece = 0.0;
  double near = xi;
  double b_near = bi;
  for (int k = 1; k <= 1100; ++k) {
    const double far = xe + (xi - xe) * std::ldexp(1.0, -k);
    if (far == near) break;
    const double lo = std::min(near, far);
    const double hi = std::max(near, far);
    piece = gauss<double, 15>::integrate(
        [&](double y) {
          const double inner = gauss<double, 7>::integrate(q, std::min(near, y), std::max(near, y));
          return f(b_near + 2.0 * (y > near ? inner : -inner));
        },
        lo, hi);
    const double db = 2.0 * gauss<double, 15>::integrate(q, lo, hi);
    b_near += far > near ? db : -db;
    near = far;
    total += piece;
    if (!std::isfinite(total)) break;
    if (piece <= 1e-17 * total && k > 8) return total;
  }
  if (!std::isfinite(total) || piece > 1e-12 * total) {
    throw Error(ErrorCode::QuadratureFailure, "cell integral next to the boundary node " + format_double(xe) +
                                                  " does not converge");
  }
  return total;
}

/// The drift seen when marching toward `side`; left endpoints are reflected.
struct Oriented {
  std::function<double(double)> q;
  double c;
  double b;
  double sign;  ///< x = sign · w
};

Oriented orient(const Diffusion1D& d, Side side) {
  if (side == Side::Right) return {[&d](double x) { return d.q(x); }, d.anchor(), d.right(), 1.0};
  return {[&d](double w) { return -d.q(-w); }, -d.anchor(), -d.left(), -1.0};
}

double grow(double value, double log_factor) { return value == 0.0 ? 0.0 : value * std::exp(log_factor); }

struct Cutoff {
  double x;
  double tail_bound;
};

/// Point beyond which the speed measure toward an infinite endpoint carries
/// at most `tol` of the mass between the anchor and that endpoint.
Cutoff automatic_cutoff(const Diffusion1D& d, Side side, double tol) {
  const Oriented o = orient(d, side);
  BoundaryMarch march(o.q, o.c, o.b);
  SeriesMonitor monitor;
  std::vector<std::pair<double, double>> cumulative;  // (position, mass up to it)
  double mass = 0.0;
  SeriesVerdict verdict = SeriesVerdict::Undecided;
  while (verdict == SeriesVerdict::Undecided && march.blocks() < BoundaryMarch::kMaxBlocks) {
    const auto block = march.next_block();
    if (block.empty()) break;
    double block_mass = 0.0;
    for (const auto& s : block) {
      const double piece =
          2.0 * std::exp(-s.b0) * (s.x1 - s.x0) * detail::expm1_ratio(-s.db);
      block_mass += piece;
      mass += piece;
      cumulative.emplace_back(s.x1, mass);
    }
    verdict = monitor.add(block_mass);
  }
  if (verdict == SeriesVerdict::Divergent) {
    throw Error(ErrorCode::InvalidInput, std::string("speed measure is infinite toward the ") +
                                             to_string(side) + " endpoint; a cutoff is required");
  }
  if (verdict == SeriesVerdict::Undecided) {
    throw Error(ErrorCode::QuadratureInconclusive,
                std::string("speed mass toward the ") + to_string(side) +
                    " endpoint undecided, partial sum " + format_double(monitor.sum()));
  }
  const double total = monitor.sum() + monitor.tail();
  for (const auto& [x, cum] : cumulative) {
    const double remaining = (total - cum) / total;
    if (remaining <= tol) return {o.sign * x, std::max(remaining, 0.0)};
  }
  return {o.sign * cumulative.back().first, monitor.tail() / total};
}

bool is_absorbing(BoundaryClass c) { return c == BoundaryClass::Regular || c == BoundaryClass::Exit; }

Eigen::VectorXd make_nodes(double a, double b, Eigen::Index states, Spacing spacing, bool grade_left,
                           bool grade_right) {
  const Eigen::Index cells = states + 1;
  Eigen::VectorXd widths = Eigen::VectorXd::Ones(cells);
  if (spacing == Spacing::Graded) {
    constexpr double kRatio = 1.05;
    constexpr double kMaxSpread = 20.0;
    for (Eigen::Index k = 0; k < cells; ++k) {
      double w = kMaxSpread;
      if (grade_left) w = std::min(w, std::pow(kRatio, static_cast<double>(k)));
      if (grade_right) w = std::min(w, std::pow(kRatio, static_cast<double>(cells - 1 - k)));
      widths[k] = w;
    }
  }
  Eigen::VectorXd nodes(cells + 1);
  nodes[0] = a;
  const double total = widths.sum();
  double acc = 0.0;
  for (Eigen::Index k = 0; k < cells; ++k) {
    acc += widths[k];
    nodes[k + 1] = a + (b - a) * (acc / total);
  }
  nodes[cells] = b;
  return nodes;
}

}  // namespace

const char* to_string(BoundaryClass c) {
  switch (c) {
    case BoundaryClass::Regular: return "Regular";
    case BoundaryClass::Exit: return "Exit";
    case BoundaryClass::Entrance: return "Entrance";
    case BoundaryClass::Natural: return "Natural";
  }
  return "?";
}

const char* to_string(Side s) { return s == Side::Left ? "left" : "right"; }

const char* to_string(Closure c) { return c == Closure::Dirichlet ? "Dirichlet" : "NoFlux"; }

Diffusion1D::Diffusion1D(double r1, double r2, Expression drift, Expression killing, double anchor)
    : r1_(r1), r2_(r2), q_(std::move(drift)), v_(std::move(killing)), c_(anchor) {
  if (std::isnan(r1) || std::isnan(r2) || !(r1 < r2) || r1 == kInf || r2 == -kInf) {
    throw Error(ErrorCode::InvalidInput, "interval must satisfy r1 < r2");
  }
  if (!std::isfinite(anchor) || !contains(anchor)) {
    throw Error(ErrorCode::InvalidInput, "anchor must lie inside the open interval");
  }
  for (double x : probe_points(9)) {
    const double qx = q(x);
    const double vx = v(x);
    if (!std::isfinite(qx)) {
      throw Error(ErrorCode::InvalidInput, "drift '" + q_.text() + "' is not finite at x = " + format_double(x));
    }
    if (!std::isfinite(vx) || vx < 0.0) {
      throw Error(ErrorCode::InvalidInput,
                  "killing '" + v_.text() + "' must be finite and nonnegative, got " + format_double(vx) +
                      " at x = " + format_double(x));
    }
  }
}

std::vector<double> Diffusion1D::probe_points(int count) const {
  std::vector<double> points;
  points.reserve(static_cast<std::size_t>(count));
  if (std::isfinite(r1_) && std::isfinite(r2_)) {
    for (int k = 1; k <= count; ++k) points.push_back(r1_ + (r2_ - r1_) * k / (count + 1));
    return points;
  }
  double half_width = 1.0;
  if (std::isfinite(r1_)) half_width = std::min(half_width, c_ - r1_);
  if (std::isfinite(r2_)) half_width = std::min(half_width, r2_ - c_);
  const double centre = 0.5 * (count + 1);
  for (int k = 1; k <= count; ++k) points.push_back(c_ + half_width * (k - centre) / centre);
  return points;
}

bool Diffusion1D::killing_vanishes() const {
  if (v_.is_constant()) return v_.constant_value() == 0.0;
  for (double x : probe_points(33)) {
    if (v(x) != 0.0) return false;
  }
  return true;
}

double ScaleSpeed::log_scale_density(double x) const {
  const double value = 2.0 * adaptive([this](double y) { return d_.q(y); }, d_.anchor(), x);
  return value;
}

double ScaleSpeed::scale(double x) const {
  const double c = d_.anchor();
  return adaptive(
      [&](double y) {
        const double b = 2.0 * gauss<double, 15>::integrate([this](double z) { return d_.q(z); }, c, y);
        return std::exp(b);
      },
      c, x);
}

ScaleSpeed scale_speed_from_drift(const Diffusion1D& d) {
  ScaleSpeed ss(d);
  const auto q = [&d](double y) { return d.q(y); };
  double worst = 0.0;
  for (double x : d.probe_points(5)) {
    const double b = ss.log_scale_density(x);
    if (!std::isfinite(b)) {
      throw Error(ErrorCode::QuadratureFailure, "log scale density not finite at x = " + format_double(x));
    }
    double h = 1e-4 * std::max(1.0, std::abs(x));
    if (std::isfinite(d.left())) h = std::min(h, 0.5 * (x - d.left()));
    if (std::isfinite(d.right())) h = std::min(h, 0.5 * (d.right() - x));
    const double bp = b + 2.0 * gauss<double, 15>::integrate(q, x, x + h);
    const double bm = b - 2.0 * gauss<double, 15>::integrate(q, x - h, x);
    const double inv_speed = 0.5 * std::exp(b);  // 1/mdens(x)

    // u = x: ½u'' − qu' = −q
    const double lhs1 = -d.q(x);
    const double rhs1 = inv_speed * (std::exp(-bp) - std::exp(-bm)) / (2.0 * h);
    // u = x²: ½u'' − qu' = 1 − 2xq
    const double lhs2 = 1.0 - 2.0 * x * d.q(x);
    const double rhs2 = inv_speed * (2.0 * (x + h) * std::exp(-bp) - 2.0 * (x - h) * std::exp(-bm)) / (2.0 * h);
    worst = std::max({worst, std::abs(lhs1 - rhs1) / (1.0 + std::abs(lhs1)),
                      std::abs(lhs2 - rhs2) / (1.0 + std::abs(lhs2))});
  }
  if (!(worst <= 1e-6)) {
    throw Error(ErrorCode::QuadratureFailure,
                "generator identity residual " + format_double(worst) + " exceeds 1e-6");
  }
  ss.identity_residual_ = worst;
  return ss;
}

BoundaryReport classify_boundary_report(const Diffusion1D& d, Side endpoint) {
  const Oriented o = orient(d, endpoint);
  BoundaryMarch march(o.q, o.c, o.b);
  SeriesMonitor mi;
  SeriesMonitor mj;
  SeriesVerdict vi = SeriesVerdict::Undecided;
  SeriesVerdict vj = SeriesVerdict::Undecided;
  // G(x) = ∫_c^x e^{B(x)−B(y)} dy and H(x) = ∫_c^x e^{B(y)−B(x)} dy, so that
  // I = 2∫G dx and J = 2∫H dx.
  double g = 0.0;
  double h = 0.0;
  while ((vi == SeriesVerdict::Undecided || vj == SeriesVerdict::Undecided) &&
         march.blocks() < BoundaryMarch::kMaxBlocks) {
    const auto block = march.next_block();
    if (block.empty()) break;
    double ai = 0.0;
    double aj = 0.0;
    for (const auto& s : block) {
      const double dx = s.x1 - s.x0;
      const double g1 = grow(g, s.db) + dx * detail::expm1_ratio(s.db);
      const double h1 = grow(h, -s.db) + dx * detail::expm1_ratio(-s.db);
      ai += dx * (g + g1);
      aj += dx * (h + h1);
      g = g1;
      h = h1;
    }
    vi = mi.add(ai);
    vj = mj.add(aj);
  }
  if (vi == SeriesVerdict::Undecided || vj == SeriesVerdict::Undecided) {
    throw Error(ErrorCode::QuadratureInconclusive,
                std::string("Feller integrals at the ") + to_string(endpoint) + " endpoint undecided after " +
                    std::to_string(march.blocks()) + " blocks; partial sums I = " + format_double(mi.sum()) +
                    ", J = " + format_double(mj.sum()));
  }
  BoundaryReport report;
  report.i = {vi == SeriesVerdict::Convergent, mi.sum(), march.blocks()};
  report.j = {vj == SeriesVerdict::Convergent, mj.sum(), march.blocks()};
  if (report.i.finite) {
    report.cls = report.j.finite ? BoundaryClass::Regular : BoundaryClass::Exit;
  } else {
    report.cls = report.j.finite ? BoundaryClass::Entrance : BoundaryClass::Natural;
  }
  return report;
}

BoundaryClass classify_boundary(const Diffusion1D& d, Side endpoint) {
  return classify_boundary_report(d, endpoint).cls;
}

ClassTReport is_class_t(const Diffusion1D& d) {
  ClassTReport r;
  r.left = classify_boundary(d, Side::Left);
  r.right = classify_boundary(d, Side::Right);
  r.class_t = r.left != BoundaryClass::Natural && r.right != BoundaryClass::Natural;
  r.explosive = r.class_t && (is_absorbing(r.left) || is_absorbing(r.right) || !d.killing_vanishes());
  return r;
}

Grid make_grid(const Diffusion1D& d, const GridOptions& options) {
  const Eigen::Index n = options.states;
  if (n < 8) throw Error(ErrorCode::GridTooCoarse, "at least 8 states are required, got " + std::to_string(n));

  Grid grid;
  double ends[2] = {d.left(), d.right()};
  for (Side side : {Side::Left, Side::Right}) {
    const int k = side == Side::Left ? 0 : 1;
    const BoundaryClass cls = classify_boundary(d, side);
    const auto& requested = side == Side::Left ? options.left_closure : options.right_closure;
    const auto& cutoff = side == Side::Left ? options.left_cutoff : options.right_cutoff;
    if (requested == Closure::Dirichlet && cls == BoundaryClass::Entrance) {
      throw Error(ErrorCode::InvalidBoundaryClosure,
                  std::string("Dirichlet closure at the ") + to_string(side) +
                      " endpoint is unreachable: the endpoint is Entrance");
    }
    const Closure closure = requested.value_or(is_absorbing(cls) ? Closure::Dirichlet : Closure::NoFlux);
    bool truncated = false;
    double tail = 0.0;
    if (cutoff) {
      if (!d.contains(*cutoff) || (side == Side::Left ? *cutoff >= d.anchor() : *cutoff <= d.anchor())) {
        throw Error(ErrorCode::InvalidInput, std::string("the ") + to_string(side) +
                                                 " cutoff must lie between the endpoint and the anchor");
      }
      ends[k] = *cutoff;
      truncated = true;
      tail = std::numeric_limits<double>::quiet_NaN();
    } else if (!std::isfinite(ends[k])) {
      const Cutoff auto_cut = automatic_cutoff(d, side, options.tail_mass);
      ends[k] = auto_cut.x;
      truncated = true;
      tail = auto_cut.tail_bound;
    }
    if (side == Side::Left) {
      grid.left = closure;
      grid.left_truncated = truncated;
      grid.left_tail_bound = tail;
    } else {
      grid.right = closure;
      grid.right_truncated = truncated;
      grid.right_tail_bound = tail;
    }
  }

  grid.nodes = make_nodes(ends[0], ends[1], n, options.spacing, grid.left == Closure::Dirichlet,
                          grid.right == Closure::Dirichlet);
  const Eigen::VectorXd& x = grid.nodes;
  const auto q = [&d](double y) { return d.q(y); };

  // B at the states, integrated outward from the state nearest the anchor.
  Eigen::VectorXd b(n);
  Eigen::Index j = 1;
  for (Eigen::Index i = 1; i <= n; ++i) {
    if (std::abs(x[i] - d.anchor()) < std::abs(x[j] - d.anchor())) j = i;
  }
  b[j - 1] = 2.0 * adaptive(q, d.anchor(), x[j]);
  for (Eigen::Index i = j; i < n; ++i) b[i] = b[i - 1] + 2.0 * gauss<double, 15>::integrate(q, x[i], x[i + 1]);
  for (Eigen::Index i = j - 1; i >= 1; --i) b[i - 1] = b[i] - 2.0 * gauss<double, 15>::integrate(q, x[i], x[i + 1]);
  grid.log_scale = b;

  // B(y) from the state at node i; inner integrals stay short.
  const auto local_b = [&](Eigen::Index i, double y) {
    return b[i - 1] + 2.0 * gauss<double, 7>::integrate(q, x[i], y);
  };

  grid.scale_increments.resize(n + 1);
  for (Eigen::Index k = 1; k < n; ++k) {
    grid.scale_increments[k] =
        gauss<double, 15>::integrate([&](double y) { return std::exp(local_b(k, y)); }, x[k], x[k + 1]);
  }
  grid.scale_increments[0] =
      grid.left == Closure::Dirichlet
          ? boundary_cell_integral(q, x[1], b[0], x[0], [](double bb) { return std::exp(bb); })
          : kInf;
  grid.scale_increments[n] =
      grid.right == Closure::Dirichlet
          ? boundary_cell_integral(q, x[n], b[n - 1], x[n + 1], [](double bb) { return std::exp(bb); })
          : kInf;

  grid.cellmass.resize(n);
  for (Eigen::Index i = 1; i <= n; ++i) {
    const auto speed = [&](double y) { return 2.0 * std::exp(-local_b(i, y)); };
    const auto speed_of_b = [](double bb) { return 2.0 * std::exp(-bb); };
    double mass = 0.0;
    if (i == 1 && grid.left == Closure::NoFlux) {
      mass += boundary_cell_integral(q, x[1], b[0], x[0], speed_of_b);
    } else {
      mass += gauss<double, 15>::integrate(speed, 0.5 * (x[i - 1] + x[i]), x[i]);
    }
    if (i == n && grid.right == Closure::NoFlux) {
      mass += boundary_cell_integral(q, x[n], b[n - 1], x[n + 1], speed_of_b);
    } else {
      mass += gauss<double, 15>::integrate(speed, x[i], 0.5 * (x[i] + x[i + 1]));
    }
    grid.cellmass[i - 1] = mass;
  }
  const bool finite = grid.cellmass.allFinite() && (grid.cellmass.array() > 0.0).all() &&
                      grid.scale_increments.segment(1, n - 1).allFinite() &&
                      (grid.scale_increments.array() > 0.0).all() && b.allFinite();
  if (!finite) {
    throw Error(ErrorCode::InvalidInput,
                "scale or speed measure is not finite and positive on the grid; shrink the interval");
  }
  return grid;
}

ReversibleGenerator discretize(const Diffusion1D& d, const Grid& g) {
  const Eigen::Index n = g.states();
  if (n < 8) throw Error(ErrorCode::GridTooCoarse, "at least 8 states are required, got " + std::to_string(n));
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = g.cellmass[i];
    const double left = 1.0 / (m * g.scale_increments[i]);
    const double right = 1.0 / (m * g.scale_increments[i + 1]);
    double out = 0.0;
    if (i > 0) q(i, i - 1) = left;
    if (i + 1 < n) q(i, i + 1) = right;
    // Links to boundary nodes are absorbing flux (Dirichlet) or zero (NoFlux, Δs = ∞).
    out += left + right;
    q(i, i) = -out - d.v(g.nodes[i + 1]);
  }
  return validate_generator(std::move(q), g.cellmass);
}

StateSet states_between(const Grid& g, double lo, double hi) {
  std::vector<Eigen::Index> states;
  for (Eigen::Index i = 0; i < g.states(); ++i) {
    const double x = g.nodes[i + 1];
    if (x >= lo && x <= hi) states.push_back(i);
  }
  return StateSet(std::move(states));
}

TightnessProfile tightness_profile(const ReversibleGenerator& g, const StateSet& k) {
  TightnessProfile p;
  p.values = resolvent(g, 1.0, k.complement(g.size()).indicator(g.size()));
  p.sup = p.values.size() > 0 ? p.values.maxCoeff() : 0.0;
  return p;
}

double density_l1_distance(const Eigen::VectorXd& a_nodes, const Eigen::VectorXd& a,
                           const Eigen::VectorXd& b_nodes, const Eigen::VectorXd& b) {
  const Eigen::Index nb = b_nodes.size();
  const auto interp = [&](double x) {
    if (x <= b_nodes[0]) return b[0];
    if (x >= b_nodes[nb - 1]) return b[nb - 1];
    const auto it = std::upper_bound(b_nodes.data(), b_nodes.data() + nb, x);
    const Eigen::Index k = it - b_nodes.data();
    const double w = (x - b_nodes[k - 1]) / (b_nodes[k] - b_nodes[k - 1]);
    return (1.0 - w) * b[k - 1] + w * b[k];
  };
  double total = 0.0;
  double prev = std::abs(a[0] - interp(a_nodes[0]));
  for (Eigen::Index i = 1; i < a_nodes.size(); ++i) {
    const double cur = std::abs(a[i] - interp(a_nodes[i]));
    total += 0.5 * (prev + cur) * (a_nodes[i] - a_nodes[i - 1]);
    prev = cur;
  }
  return total;
}

namespace {

QsdDensity solve_density(const Diffusion1D& d, const GridOptions& grid_options) {
  QsdDensity out;
  out.grid = make_grid(d, grid_options);
  const ReversibleGenerator g = discretize(d, out.grid);
  out.eig = principal_eigenpair(g);
  out.qsd = qsd(g, out.eig);
  out.nodes = out.grid.interior();
  const double normalizer = out.eig.phi0.dot(out.grid.cellmass);
  out.density = (out.eig.phi0.array() * 2.0 * (-out.grid.log_scale.array()).exp() / normalizer).matrix();
  return out;
}

}  // namespace

QsdDensity qsd_density(const Diffusion1D& d, const GridOptions& grid, const QsdDensityOptions& options) {
  const ClassTReport verdict = is_class_t(d);
  if (!verdict.class_t) {
    throw Error(ErrorCode::NotClassT, std::string("boundary classes (") + to_string(verdict.left) + ", " +
                                          to_string(verdict.right) + ") include a Natural endpoint");
  }
  if (!verdict.explosive) {
    throw Error(ErrorCode::NotExplosive, "no absorbing endpoint and no killing: the process never dies");
  }
  QsdDensity out = solve_density(d, grid);

  if (options.refinement_check) {
    GridOptions coarse = grid;
    coarse.states = std::max<Eigen::Index>(8, grid.states / 2);
    GridOptions fine = grid;
    fine.states = 2 * grid.states;
    const QsdDensity c = solve_density(d, coarse);
    const QsdDensity f = solve_density(d, fine);
    const double e0 = density_l1_distance(out.nodes, out.density, c.nodes, c.density);
    const double e1 = density_l1_distance(f.nodes, f.density, out.nodes, out.density);
    out.refinement_difference = e1;
    out.richardson_prediction = e0 / 4.0;
    out.refinement_consistent = e1 <= 4.0 * (e0 / 4.0);
  }

  if (options.truncation_check && (out.grid.left_truncated || out.grid.right_truncated)) {
    GridOptions wider = grid;
    const double c = d.anchor();
    if (out.grid.left_truncated) {
      const double cut = c - 2.0 * (c - out.grid.nodes[0]);
      wider.left_cutoff = std::isfinite(d.left()) ? std::max(cut, 0.5 * (d.left() + out.grid.nodes[0])) : cut;
    }
    if (out.grid.right_truncated) {
      const double last = out.grid.nodes[out.grid.nodes.size() - 1];
      const double cut = c + 2.0 * (last - c);
      wider.right_cutoff = std::isfinite(d.right()) ? std::min(cut, 0.5 * (d.right() + last)) : cut;
    }
    // Same resolution on the longer interval, so only the truncation changes.
    const double old_length = out.grid.nodes[out.grid.nodes.size() - 1] - out.grid.nodes[0];
    const double new_length = wider.right_cutoff.value_or(out.grid.nodes[out.grid.nodes.size() - 1]) -
                              wider.left_cutoff.value_or(out.grid.nodes[0]);
    wider.states = static_cast<Eigen::Index>(std::lround(static_cast<double>(grid.states) * new_length / old_length));
    wider.left_closure = out.grid.left;
    wider.right_closure = out.grid.right;
    const QsdDensity w = solve_density(d, wider);
    out.truncation_sensitivity = std::abs(w.eig.lambda0 - out.eig.lambda0);
  }
  return out;
}

}  // namespace qsdlab
