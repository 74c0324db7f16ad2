#include "qsdlab/montecarlo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/interpolators/pchip.hpp>
#include <boost/math/tools/roots.hpp>
#include <boost/random/binomial_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include "qsdlab/error.hpp"
#include "qsdlab/philox.hpp"

namespace qsdlab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Streams with the top bit set are reserved for resampling, never for paths.
constexpr std::uint64_t kAuxStream = std::uint64_t{1} << 63;

/// Runs body(i) for i in [0, n) on `threads` workers in contiguous chunks.
template <class F>
void parallel_for(std::int64_t n, int threads, F&& body) {
  const int workers = static_cast<int>(std::min<std::int64_t>(std::max(threads, 1), std::max<std::int64_t>(n, 1)));
  if (workers == 1) {
    for (std::int64_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      const std::int64_t begin = n * w / workers;
      const std::int64_t end = n * (w + 1) / workers;
      try {
        for (std::int64_t i = begin; i < end; ++i) body(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct Boundary {
  double a = -HUGE_VAL;
  double b = HUGE_VAL;
  bool absorb_a = false;
  bool absorb_b = false;
};

Boundary boundary_of(const Diffusion1D& d) {
  Boundary bd{d.left(), d.right(), false, false};
  const auto absorbing = [](BoundaryClass c) { return c == BoundaryClass::Regular || c == BoundaryClass::Exit; };
  if (std::isfinite(bd.a)) bd.absorb_a = absorbing(classify_boundary(d, Side::Left));
  if (std::isfinite(bd.b)) bd.absorb_b = absorbing(classify_boundary(d, Side::Right));
  return bd;
}

/// Folds y back into [a, b] by reflection at the finite ends.
double reflect(double y, double a, double b) {
  for (int k = 0; k < 64; ++k) {
    if (y < a) {
      y = 2.0 * a - y;
    } else if (y > b) {
      y = 2.0 * b - y;
    } else {
      return y;
    }
  }
  return std::clamp(y, a, b);
}

double sample_cell_law(const CellLaw& law, const std::vector<double>& cdf, double u1, double u2) {
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u1);
  const auto i = static_cast<Eigen::Index>(std::min<std::ptrdiff_t>(it - cdf.begin(), law.probabilities.size() - 1));
  return law.edges[i] + u2 * (law.edges[i + 1] - law.edges[i]);
}

std::vector<double> cumulative(const CellLaw& law) {
  std::vector<double> cdf(static_cast<std::size_t>(law.probabilities.size()));
  double acc = 0.0;
  for (Eigen::Index i = 0; i < law.probabilities.size(); ++i) {
    acc += law.probabilities[i];
    cdf[static_cast<std::size_t>(i)] = acc;
  }
  for (auto& c : cdf) c /= acc;
  return cdf;
}

std::int64_t step_count(double span, double dt) { return std::llround(span / dt); }

/// Multinomial draw by sequential binomials.
Eigen::VectorXd multinomial(std::int64_t n, const Eigen::VectorXd& p, PhiloxStream& rng) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(p.size());
  double remaining_p = 1.0;
  std::int64_t remaining = n;
  for (Eigen::Index k = 0; k < p.size() && remaining > 0; ++k) {
    if (k + 1 == p.size() || remaining_p <= 0.0) {
      out[k] = static_cast<double>(remaining);
      break;
    }
    const double prob = std::clamp(p[k] / remaining_p, 0.0, 1.0);
    boost::random::binomial_distribution<std::int64_t, double> draw(remaining, prob);
    const std::int64_t c = draw(rng);
    out[k] = static_cast<double>(c);
    remaining -= c;
    remaining_p -= p[k];
  }
  return out;
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double tv(const Eigen::VectorXd& p, const Eigen::VectorXd& r) { return 0.5 * (p - r).cwiseAbs().sum(); }

}  // namespace

void PathConfig::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw Error(ErrorCode::InvalidInput, "dt must be positive");
  if (!(horizon >= dt) || !std::isfinite(horizon)) throw Error(ErrorCode::InvalidInput, "horizon must be at least dt");
  if (n_paths < 1) throw Error(ErrorCode::InvalidInput, "n_paths must be at least 1");
  if (threads < 1) throw Error(ErrorCode::InvalidInput, "threads must be at least 1");
  for (double s : snapshot_times) {
    if (!(s >= 0.0 && s <= horizon)) throw Error(ErrorCode::InvalidInput, "snapshot times must lie in [0, horizon]");
  }
}

CellLaw CellLaw::from_qsd(const QsdDensity& q) {
  const Eigen::VectorXd& x = q.grid.nodes;
  const Eigen::Index n = q.grid.states();
  CellLaw law;
  law.edges.resize(n + 1);
  law.edges[0] = q.grid.left == Closure::NoFlux ? x[0] : 0.5 * (x[0] + x[1]);
  for (Eigen::Index i = 1; i < n; ++i) law.edges[i] = 0.5 * (x[i] + x[i + 1]);
  law.edges[n] = q.grid.right == Closure::NoFlux ? x[n + 1] : 0.5 * (x[n] + x[n + 1]);
  law.probabilities = q.qsd.nu / q.qsd.nu.sum();
  return law;
}

Eigen::VectorXd CellLaw::bin_masses(const Eigen::VectorXd& bin_edges) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(bin_edges.size() - 1);
  for (Eigen::Index i = 0; i < probabilities.size(); ++i) {
    const double lo = edges[i];
    const double hi = edges[i + 1];
    for (Eigen::Index k = 0; k + 1 < bin_edges.size(); ++k) {
      const double overlap = std::min(hi, bin_edges[k + 1]) - std::max(lo, bin_edges[k]);
      if (overlap > 0.0) out[k] += probabilities[i] * overlap / (hi - lo);
    }
  }
  return out;
}

std::int64_t PathEnsemble::count(PathFate f) const {
  return std::count(fates.begin(), fates.end(), f);
}

double PathEnsemble::survival_fraction(double t) const {
  // A censored path is alive throughout [0, horizon].
  std::int64_t alive = 0;
  for (std::int64_t i = 0; i < size(); ++i) {
    if (lifetimes[i] > t || (fates[static_cast<std::size_t>(i)] == PathFate::Censored && t <= horizon)) ++alive;
  }
  return static_cast<double>(alive) / static_cast<double>(size());
}

std::size_t PathEnsemble::snapshot_index(double t) const {
  for (std::size_t k = 0; k < snapshot_times.size(); ++k) {
    if (std::abs(snapshot_times[k] - t) <= 1e-12 * std::max(1.0, std::abs(t))) return k;
  }
  throw Error(ErrorCode::InvalidInput, "no snapshot was recorded at the requested time");
}

PathEnsemble simulate_killed_paths(const Diffusion1D& d, const InitialLaw& init, const PathConfig& cfg) {
  cfg.validate();
  if (init.point && !d.contains(*init.point)) {
    throw Error(ErrorCode::InitOutsideDomain, "initial point lies outside the open interval");
  }
  if (init.law && (init.law->edges[0] < d.left() || init.law->edges[init.law->edges.size() - 1] > d.right())) {
    throw Error(ErrorCode::InitOutsideDomain, "initial law extends outside the interval");
  }
  if (!init.point && !init.law) throw Error(ErrorCode::InvalidInput, "initial law is empty");

  double max_drift = 0.0;
  for (double x : d.probe_points(33)) max_drift = std::max(max_drift, std::abs(d.q(x)));
  if (cfg.dt * max_drift > 0.1) {
    throw Error(ErrorCode::StepTooLarge, "dt * max|q| = " + std::to_string(cfg.dt * max_drift) + " exceeds 0.1");
  }

  const Boundary bd = boundary_of(d);
  const std::int64_t steps = step_count(cfg.horizon, cfg.dt);
  const double horizon = static_cast<double>(steps) * cfg.dt;
  const double sqrt_dt = std::sqrt(cfg.dt);
  const bool drift_free = d.drift().is_constant() && d.drift().constant_value() == 0.0;
  const bool killing_free = d.killing().is_constant() && d.killing().constant_value() == 0.0;
  const std::vector<double> cdf = init.law ? cumulative(*init.law) : std::vector<double>{};

  // Snapshot slots sorted by step index.
  const std::size_t n_snap = cfg.snapshot_times.size();
  std::vector<std::pair<std::int64_t, std::size_t>> snap_steps;
  for (std::size_t k = 0; k < n_snap; ++k) snap_steps.emplace_back(step_count(cfg.snapshot_times[k], cfg.dt), k);
  std::sort(snap_steps.begin(), snap_steps.end());

  PathEnsemble ens;
  ens.lifetimes.resize(cfg.n_paths);
  ens.fates.resize(static_cast<std::size_t>(cfg.n_paths));
  ens.horizon = horizon;
  ens.dt = cfg.dt;
  ens.snapshot_times = cfg.snapshot_times;
  std::vector<double> positions(static_cast<std::size_t>(cfg.n_paths) * n_snap, kNaN);

  parallel_for(cfg.n_paths, cfg.threads, [&](std::int64_t path) {
    PhiloxStream rng(cfg.seed, static_cast<std::uint64_t>(path));
    boost::random::normal_distribution<double> normal;
    boost::random::uniform_01<double> uniform;
    double* snaps = positions.data() + static_cast<std::size_t>(path) * n_snap;

    double x = init.point ? *init.point : sample_cell_law(*init.law, cdf, uniform(rng), uniform(rng));
    std::size_t next_snap = 0;
    const auto record = [&](std::int64_t step, double pos) {
      while (next_snap < snap_steps.size() && snap_steps[next_snap].first == step) {
        snaps[snap_steps[next_snap].second] = pos;
        ++next_snap;
      }
    };
    record(0, x);

    double lifetime = horizon;
    PathFate fate = PathFate::Censored;
    for (std::int64_t k = 0; k < steps; ++k) {
      const double t = static_cast<double>(k) * cfg.dt;
      if (!killing_free) {
        const double v = d.v(x);
        if (v > 0.0) {
          const double u = uniform(rng);
          const double tau = -std::log1p(-u) / v;
          if (tau < cfg.dt) {
            lifetime = t + tau;
            fate = PathFate::Killed;
            break;
          }
        }
      }
      double y = x + sqrt_dt * normal(rng);
      if (!drift_free) y -= d.q(x) * cfg.dt;

      if ((bd.absorb_a && y <= bd.a) || (bd.absorb_b && y >= bd.b)) {
        const double end = y <= bd.a ? bd.a : bd.b;
        lifetime = t + cfg.dt * (x - end) / (x - y);
        fate = PathFate::Absorbed;
        break;
      }
      if (cfg.bridge_correction) {
        bool crossed = false;
        for (int side = 0; side < 2 && !crossed; ++side) {
          const bool absorbing = side == 0 ? bd.absorb_a : bd.absorb_b;
          if (!absorbing) continue;
          const double end = side == 0 ? bd.a : bd.b;
          const double exponent = 2.0 * (x - end) * (y - end) / cfg.dt;
          if (exponent < 700.0 && uniform(rng) < std::exp(-exponent)) crossed = true;
        }
        if (crossed) {
          lifetime = t + 0.5 * cfg.dt;
          fate = PathFate::Absorbed;
          break;
        }
      }
      if (y <= bd.a || y >= bd.b) y = reflect(y, bd.a, bd.b);
      x = y;
      record(k + 1, x);
    }
    ens.lifetimes[path] = lifetime;
    ens.fates[static_cast<std::size_t>(path)] = fate;
  });

  ens.snapshots.assign(n_snap, {});
  for (std::size_t k = 0; k < n_snap; ++k) {
    auto& out = ens.snapshots[k];
    for (std::int64_t p = 0; p < cfg.n_paths; ++p) {
      const double pos = positions[static_cast<std::size_t>(p) * n_snap + k];
      if (!std::isnan(pos)) out.push_back(pos);
    }
  }
  return ens;
}

Histogram make_histogram(const std::vector<double>& samples, const Eigen::VectorXd& edges) {
  Histogram h;
  h.edges = edges;
  const Eigen::Index bins = edges.size() - 1;
  h.counts = Eigen::VectorXd::Zero(bins);
  for (double s : samples) {
    const auto it = std::upper_bound(edges.data(), edges.data() + edges.size(), s);
    Eigen::Index k = (it - edges.data()) - 1;
    if (k < 0 || k > bins) continue;
    if (k == bins) {
      if (s != edges[bins]) continue;
      k = bins - 1;
    }
    h.counts[k] += 1.0;
  }
  h.total = static_cast<std::int64_t>(h.counts.sum());
  const double n = std::max<double>(1.0, static_cast<double>(h.total));
  h.mass = h.counts / n;
  h.std_error = (h.mass.array() * (1.0 - h.mass.array()) / n).sqrt().matrix();
  return h;
}

Histogram empirical_conditional_law(const PathEnsemble& ens, double t, const Eigen::VectorXd& bin_edges) {
  if (t > ens.horizon + 1e-12) throw Error(ErrorCode::InvalidInput, "time exceeds the horizon");
  const auto& alive = ens.snapshots[ens.snapshot_index(t)];
  if (alive.size() < 100) {
    throw Error(ErrorCode::TooFewSurvivors,
                std::to_string(alive.size()) + " paths alive at t = " + std::to_string(t) + ", need 100");
  }
  return make_histogram(alive, bin_edges);
}

ChiSquareResult chi_square_test(const Eigen::VectorXd& counts, const Eigen::VectorXd& probabilities) {
  if (counts.size() != probabilities.size() || counts.size() == 0) {
    throw Error(ErrorCode::InvalidInput, "counts and probabilities must have equal nonzero length");
  }
  const double n = counts.sum();
  const Eigen::VectorXd p = probabilities / probabilities.sum();
  std::vector<double> obs;
  std::vector<double> expd;
  double o_acc = 0.0;
  double e_acc = 0.0;
  for (Eigen::Index k = 0; k < counts.size(); ++k) {
    o_acc += counts[k];
    e_acc += n * p[k];
    if (e_acc >= 5.0) {
      obs.push_back(o_acc);
      expd.push_back(e_acc);
      o_acc = e_acc = 0.0;
    }
  }
  if (e_acc > 0.0 || o_acc > 0.0) {
    if (expd.empty()) {
      obs.push_back(o_acc);
      expd.push_back(e_acc);
    } else {
      obs.back() += o_acc;
      expd.back() += e_acc;
    }
  }
  ChiSquareResult r;
  r.merged_bins = static_cast<int>(obs.size());
  r.dof = r.merged_bins - 1;
  for (std::size_t k = 0; k < obs.size(); ++k) {
    if (expd[k] > 0.0) r.statistic += (obs[k] - expd[k]) * (obs[k] - expd[k]) / expd[k];
  }
  if (r.dof >= 1) {
    r.p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(r.dof), r.statistic));
  }
  return r;
}

RateEstimate survival_rate_estimate(const PathEnsemble& ens, double t1, double t2) {
  if (!(t1 >= 0.0 && t2 > t1)) throw Error(ErrorCode::InvalidInput, "window must satisfy 0 <= t1 < t2");
  if (t2 > ens.horizon + 1e-12) throw Error(ErrorCode::InvalidInput, "window exceeds the horizon");
  const double n = static_cast<double>(ens.size());
  if (ens.survival_fraction(t2) * n < 100.0) {
    throw Error(ErrorCode::TooFewSurvivors, "fewer than 100 paths survive the window");
  }
  constexpr int kPoints = 11;
  Eigen::VectorXd t(kPoints), y(kPoints), s(kPoints);
  for (int i = 0; i < kPoints; ++i) {
    t[i] = t1 + (t2 - t1) * i / (kPoints - 1);
    s[i] = ens.survival_fraction(t[i]);
    y[i] = -std::log(s[i]);
  }
  const double tm = t.mean();
  const Eigen::VectorXd w = (t.array() - tm).matrix() / (t.array() - tm).square().sum();
  RateEstimate r;
  r.rate = w.dot(y);
  // Cov(log Ŝ_i, log Ŝ_j) = (1 − S_i)/(N S_i) for t_i <= t_j.
  double var = 0.0;
  for (int i = 0; i < kPoints; ++i) {
    for (int j = 0; j < kPoints; ++j) {
      const int first = std::min(i, j);
      var += w[i] * w[j] * (1.0 - s[first]) / (n * s[first]);
    }
  }
  r.std_error = std::sqrt(std::max(var, 0.0));
  return r;
}

MannKendall mann_kendall(const std::vector<double>& values) {
  MannKendall mk;
  const auto n = static_cast<double>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (std::size_t j = i + 1; j < values.size(); ++j) {
      const double diff = values[j] - values[i];
      mk.s += static_cast<double>((diff > 0.0) - (diff < 0.0));
    }
  }
  const double var = n * (n - 1.0) * (2.0 * n + 5.0) / 18.0;
  if (var <= 0.0) return mk;
  mk.z = mk.s > 0.0 ? (mk.s - 1.0) / std::sqrt(var) : mk.s < 0.0 ? (mk.s + 1.0) / std::sqrt(var) : 0.0;
  mk.p_decreasing = boost::math::cdf(boost::math::normal_distribution<double>(), mk.z);
  return mk;
}

YaglomEstimate yaglom_estimate(const Diffusion1D& d, const InitialLaw& init, const PathConfig& cfg,
                               const CellLaw& reference, const std::vector<double>& times,
                               const YaglomOptions& options) {
  if (!std::is_sorted(times.begin(), times.end()) || times.empty()) {
    throw Error(ErrorCode::InvalidInput, "times must be a nonempty increasing list");
  }
  PathConfig run = cfg;
  run.horizon = std::max(times.back(), cfg.dt);
  run.snapshot_times = times;
  const PathEnsemble ens = simulate_killed_paths(d, init, run);

  const Eigen::VectorXd edges =
      options.bin_edges.size() >= 2
          ? options.bin_edges
          : uniform_bins(reference.edges[0], reference.edges[reference.edges.size() - 1], 20);
  const Eigen::VectorXd ref = reference.bin_masses(edges);

  YaglomEstimate out;
  out.times = times;
  std::vector<double> valid;
  for (std::size_t k = 0; k < times.size(); ++k) {
    const auto& alive = ens.snapshots[k];
    out.survivors.push_back(static_cast<std::int64_t>(alive.size()));
    if (alive.size() < 100) {
      out.too_few_survivors.push_back(true);
      out.tv_distance.push_back(kNaN);
      out.ci_halfwidth.push_back(kNaN);
      out.null_tv95.push_back(kNaN);
      continue;
    }
    out.too_few_survivors.push_back(false);
    const Histogram h = make_histogram(alive, edges);
    const double observed = tv(h.mass, ref);
    const auto n = static_cast<std::int64_t>(alive.size());
    PhiloxStream rng(cfg.seed, kAuxStream | k);
    std::vector<double> boot, null;
    for (int b = 0; b < options.bootstrap; ++b) {
      boot.push_back(tv(multinomial(n, h.mass, rng) / static_cast<double>(n), ref));
      null.push_back(tv(multinomial(n, ref, rng) / static_cast<double>(n), ref));
    }
    out.tv_distance.push_back(observed);
    out.ci_halfwidth.push_back(options.bootstrap > 1 ? 0.5 * (quantile(boot, 0.975) - quantile(boot, 0.025)) : 0.0);
    out.null_tv95.push_back(options.bootstrap > 1 ? quantile(null, 0.95) : 0.0);
    valid.push_back(observed);
  }
  out.trend = mann_kendall(valid);
  out.trend_decreasing = valid.size() >= 2 && out.trend.p_decreasing < options.trend_level;
  return out;
}

double tail_rate_estimate(const PathEnsemble& ens) {
  std::vector<double> sorted(ens.lifetimes.data(), ens.lifetimes.data() + ens.size());
  std::sort(sorted.begin(), sorted.end());
  const double start = sorted[(sorted.size() * 9) / 10];
  double deaths = 0.0;
  double exposure = 0.0;
  for (std::int64_t i = 0; i < ens.size(); ++i) {
    const double z = ens.lifetimes[i];
    if (z <= start) continue;
    exposure += z - start;
    if (ens.fates[static_cast<std::size_t>(i)] != PathFate::Censored) deaths += 1.0;
  }
  return exposure > 0.0 ? deaths / exposure : kNaN;
}

MomentEstimate exp_zeta_moment_estimate(const PathEnsemble& ens, double gamma, std::optional<double> lambda0_estimate) {
  if (!(gamma >= 0.0)) throw Error(ErrorCode::InvalidInput, "gamma must be nonnegative");
  MomentEstimate m;
  const double n = static_cast<double>(ens.size());
  m.censored_fraction = static_cast<double>(ens.count(PathFate::Censored)) / n;
  m.lambda0_estimate = lambda0_estimate.value_or(tail_rate_estimate(ens));
  if (gamma == 0.0) return m;
  if (m.censored_fraction >= 1e-3) {
    throw Error(ErrorCode::HeavyCensoring,
                "censored fraction " + std::to_string(m.censored_fraction) + " is not below 1e-3");
  }
  if (!(gamma < 0.9 * m.lambda0_estimate)) {
    throw Error(ErrorCode::GammaTooLarge, "gamma = " + std::to_string(gamma) + " is not below 0.9 * lambda0 estimate " +
                                              std::to_string(m.lambda0_estimate));
  }
  const Eigen::ArrayXd values = (gamma * ens.lifetimes.array()).exp();
  m.value = values.mean();
  const double var = (values - m.value).square().sum() / std::max(1.0, n - 1.0);
  m.std_error = std::sqrt(var / n);
  m.censoring_bias_bound = m.censored_fraction * std::exp(gamma * ens.horizon) * m.lambda0_estimate /
                           (m.lambda0_estimate - gamma);
  return m;
}

HProcessResult doob_paths(const Diffusion1D& d, const Grid& grid, const PrincipalEigenpair& eig, double x0,
                          const PathConfig& cfg, const HProcessOptions& options) {
  cfg.validate();
  const Eigen::Index n = grid.states();
  if (eig.phi0.size() != n) throw Error(ErrorCode::InvalidInput, "eigenpair does not match the grid");
  if ((eig.phi0.array() <= 0.0).any()) throw Error(ErrorCode::NonPositivePhi, "phi0 is not strictly positive");
  const double ra = grid.nodes[0];
  const double rb = grid.nodes[n + 1];
  if (!(x0 > ra && x0 < rb)) throw Error(ErrorCode::InitOutsideDomain, "x0 lies outside the grid interval");
  if (options.paths < 1 || !(options.burn_in >= 0.0) || !(options.sample_interval > 0.0)) {
    throw Error(ErrorCode::InvalidInput, "h-process options out of range");
  }

  std::vector<double> xs(grid.nodes.data() + 1, grid.nodes.data() + 1 + n);
  std::vector<double> logphi(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) logphi[static_cast<std::size_t>(i)] = std::log(eig.phi0[i]);
  const boost::math::interpolators::pchip<std::vector<double>> interp(std::move(xs), std::move(logphi));
  const double x1 = grid.nodes[1];
  const double xn = grid.nodes[n];
  const bool dir_a = grid.left == Closure::Dirichlet;
  const bool dir_b = grid.right == Closure::Dirichlet;
  const double slope_a = interp.prime(x1);
  const double slope_b = interp.prime(xn);

  const auto log_derivative = [&](double x) {
    if (x < x1) return dir_a ? 1.0 / (x - ra) : slope_a;
    if (x > xn) return dir_b ? -1.0 / (rb - x) : slope_b;
    return interp.prime(x);
  };
  const auto drift = [&](double x) { return -d.q(x) + log_derivative(x); };

  const double sqrt_dt = std::sqrt(cfg.dt);
  const double implicit_zone = 10.0 * sqrt_dt;
  double max_drift = 0.0;
  for (Eigen::Index i = 1; i <= n; ++i) {
    const double x = grid.nodes[i];
    if ((dir_a && x - ra < implicit_zone) || (dir_b && rb - x < implicit_zone)) continue;
    max_drift = std::max(max_drift, std::abs(drift(x)));
  }
  if (cfg.dt * max_drift > 0.1) {
    throw Error(ErrorCode::StepTooLarge, "dt * max|h-drift| = " + std::to_string(cfg.dt * max_drift) + " exceeds 0.1");
  }

  // y − b(y)dt = target, with F increasing near a Dirichlet end.
  const auto implicit_step = [&](double target) {
    const auto f = [&](double y) { return y - drift(y) * cfg.dt - target; };
    const double span = rb - ra;
    double lo = dir_a ? ra + 1e-14 * span : ra;
    double hi = dir_b ? rb - 1e-14 * span : rb;
    if (f(lo) > 0.0 || f(hi) < 0.0) return kNaN;
    std::uintmax_t iterations = 200;
    const auto [a, b] = boost::math::tools::toms748_solve(f, lo, hi, boost::math::tools::eps_tolerance<double>(50),
                                                          iterations);
    return 0.5 * (a + b);
  };

  const std::int64_t steps = step_count(cfg.horizon, cfg.dt);
  const std::int64_t burn = step_count(options.burn_in, cfg.dt);
  const std::int64_t thin = std::max<std::int64_t>(1, step_count(options.sample_interval, cfg.dt));
  const Eigen::VectorXd edges = options.bin_edges.size() >= 2 ? options.bin_edges : uniform_bins(ra, rb, 20);
  const Eigen::Index bins = edges.size() - 1;

  std::vector<Eigen::VectorXd> occ(static_cast<std::size_t>(options.paths), Eigen::VectorXd::Zero(bins));
  std::vector<std::vector<double>> samples(static_cast<std::size_t>(options.paths));
  const auto bin_of = [&](double x) {
    const auto it = std::upper_bound(edges.data(), edges.data() + edges.size(), x);
    return std::clamp<Eigen::Index>((it - edges.data()) - 1, 0, bins - 1);
  };

  parallel_for(options.paths, cfg.threads, [&](std::int64_t path) {
    PhiloxStream rng(cfg.seed, static_cast<std::uint64_t>(path));
    boost::random::normal_distribution<double> normal;
    auto& counts = occ[static_cast<std::size_t>(path)];
    auto& kept = samples[static_cast<std::size_t>(path)];
    double x = x0;
    for (std::int64_t k = 0; k < steps; ++k) {
      const double noise = sqrt_dt * normal(rng);
      double y;
      if ((dir_a && x - ra < implicit_zone) || (dir_b && rb - x < implicit_zone)) {
        y = implicit_step(x + noise);
      } else {
        y = x + drift(x) * cfg.dt + noise;
      }
      if (!(y > ra && y < rb)) {
        const bool hits_dirichlet = !(y > ra) ? dir_a : dir_b;
        if (hits_dirichlet || std::isnan(y)) {
          throw Error(ErrorCode::AbsorptionInHProcess,
                      "h-process left the interval at step " + std::to_string(k) + " of path " + std::to_string(path));
        }
        y = reflect(y, ra, rb);
      }
      x = y;
      if (k + 1 >= burn) {
        counts[bin_of(x)] += 1.0;
        if ((k + 1 - burn) % thin == 0) kept.push_back(x);
      }
    }
  });

  HProcessResult out;
  Eigen::VectorXd total = Eigen::VectorXd::Zero(bins);
  std::vector<double> all_samples;
  for (std::size_t p = 0; p < occ.size(); ++p) {
    total += occ[p];
    all_samples.insert(all_samples.end(), samples[p].begin(), samples[p].end());
  }
  out.occupation.edges = edges;
  out.occupation.counts = total;
  out.occupation.total = static_cast<std::int64_t>(total.sum());
  const double nt = std::max(1.0, total.sum());
  out.occupation.mass = total / nt;
  out.occupation.std_error = (out.occupation.mass.array() * (1.0 - out.occupation.mass.array()) / nt).sqrt().matrix();
  out.samples = make_histogram(all_samples, edges);
  out.steps = steps * options.paths;
  out.absorptions = 0;
  return out;
}

Eigen::VectorXd uniform_bins(double lo, double hi, int count) {
  if (!(hi > lo) || count < 1) throw Error(ErrorCode::InvalidInput, "bins need hi > lo and a positive count");
  return Eigen::VectorXd::LinSpaced(count + 1, lo, hi);
}

}  // namespace qsdlab
