// qsd-lab: batch front end. Reads a problem config, runs one subcommand (or
// the whole ladder) and writes report.json plus CSV tables to the output dir.
//
// Exit codes: 0 success, 1 input error, 2 contract violation or failed check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "qsdlab/diffusion1d.hpp"
#include "qsdlab/error.hpp"
#include "qsdlab/expression.hpp"
#include "qsdlab/generator.hpp"
#include "qsdlab/montecarlo.hpp"
#include "qsdlab/spectral.hpp"

#ifndef QSDLAB_VERSION
#define QSDLAB_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using Eigen::Index;
using Eigen::VectorXd;
using namespace qsdlab;

namespace {

constexpr int kReportSchemaVersion = 1;
constexpr int kCsvSchemaVersion = 1;
constexpr double kInf = std::numeric_limits<double>::infinity();

const std::vector<std::string> kSubcommands = {"classify",   "spectrum",  "qsd",    "verify-qsd", "doob-check",
                                               "tightness",  "yaglom",    "moments", "all"};

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorCode::ConfigParse, what); }

// ---------------------------------------------------------------- tolerances

struct Tolerances {
  double lambda0_abs;
  double density_l1;
  double invariance;
  double uniqueness;
  double eigen_residual;
  double row_sum;
  double balance;
  double intertwining;
  double intertwining_time;
  double ergodic_time;
  double ergodic_slack;
  double ergodic_floor;
  double stderr_multiple;

  json to_json() const {
    return {{"lambda0_abs", lambda0_abs},         {"density_l1", density_l1},
            {"invariance", invariance},           {"uniqueness", uniqueness},
            {"eigen_residual", eigen_residual},   {"row_sum", row_sum},
            {"balance", balance},                 {"intertwining", intertwining},
            {"intertwining_time", intertwining_time}, {"ergodic_time", ergodic_time},
            {"ergodic_slack", ergodic_slack},     {"ergodic_floor", ergodic_floor},
            {"stderr_multiple", stderr_multiple}};
  }
};

Tolerances tolerance_profile(const std::string& name) {
  Tolerances t{1e-3, 1e-3, 1e-10, 1e-10, 1e-8, 1e-12, 1e-12, 1e-9, 3.0, 20.0, 10.0, 1e-9, 3.0};
  if (name == "strict") {
    t.lambda0_abs = 2.5e-4;
    t.density_l1 = 2.5e-4;
    t.invariance = 1e-12;
    t.eigen_residual = 1e-10;
    t.ergodic_slack = 2.0;
    t.stderr_multiple = 2.0;
  }
  return t;
}

// ---------------------------------------------------------------- config

struct Flags {
  std::optional<std::uint64_t> seed;
  std::optional<long long> grid_n;
  std::optional<double> dt;
  std::optional<long long> paths;
  std::optional<std::string> out;
  std::string profile = "default";
};

struct ProblemConfig {
  std::string kind;  // "chain" or "diffusion"
  std::optional<ReversibleGenerator> chain;
  std::optional<Diffusion1D> diffusion;
  GridOptions grid;
  PathConfig mc;
  std::optional<double> x0;
  std::vector<double> times = {0.25, 0.5, 1.0, 1.5, 2.0};
  std::optional<double> gamma;
  std::optional<double> tight_lo, tight_hi;
  std::vector<Index> tight_states;
  std::optional<Expression> ref_density;
  std::optional<double> ref_lambda0;
  fs::path output = "qsd-lab-out";
  std::string digest;
};

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

const json& require(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) config_error(where + ": missing '" + key + "'");
  return j.at(key);
}

double as_number(const json& j, const std::string& where) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf" || s == "+inf") return kInf;
    if (s == "-inf") return -kInf;
    try {
      const auto e = Expression::parse(s);
      if (e.is_constant()) return e.constant_value();
    } catch (const Error&) {
    }
  }
  config_error(where + ": expected a number");
}

template <class T>
T as_integer(const json& j, const std::string& where, T lo) {
  if (!j.is_number_integer()) config_error(where + ": expected an integer");
  const auto v = j.get<long long>();
  if (v < static_cast<long long>(lo)) config_error(where + ": must be >= " + std::to_string(lo));
  return static_cast<T>(v);
}

std::string as_string(const json& j, const std::string& where) {
  if (!j.is_string()) config_error(where + ": expected a string");
  return j.get<std::string>();
}

Expression as_expression(const json& j, const std::string& where) {
  if (j.is_number()) return Expression::constant(j.get<double>());
  return Expression::parse(as_string(j, where));
}

Closure as_closure(const json& j, const std::string& where) {
  const auto s = as_string(j, where);
  if (s == "dirichlet") return Closure::Dirichlet;
  if (s == "noflux") return Closure::NoFlux;
  config_error(where + ": expected 'dirichlet' or 'noflux'");
}

ReversibleGenerator parse_chain(const json& c, const fs::path& base) {
  if (c.contains("file")) {
    const fs::path p = base / as_string(c.at("file"), "chain.file");
    std::ifstream in(p);
    if (!in) config_error("chain.file: cannot open " + p.string());
    json inner;
    try {
      inner = json::parse(in);
    } catch (const json::exception& e) {
      config_error("chain.file: " + std::string(e.what()));
    }
    return parse_chain(inner, p.parent_path());
  }
  if (c.contains("random")) {
    const auto& r = c.at("random");
    const auto n = as_integer<Index>(require(r, "n", "chain.random"), "chain.random.n", 1);
    const auto seed = as_integer<std::uint64_t>(require(r, "seed", "chain.random"), "chain.random.seed", 0);
    return make_random_generator(n, seed);
  }
  const auto& rates = require(c, "rates", "chain");
  const auto& masses = require(c, "masses", "chain");
  if (!rates.is_array() || !masses.is_array()) config_error("chain: rates and masses must be arrays");
  const auto n = static_cast<Index>(masses.size());
  if (n == 0 || static_cast<Index>(rates.size()) != n) config_error("chain: rates must be n x n with n = |masses|");
  Eigen::MatrixXd q(n, n);
  VectorXd m(n);
  for (Index i = 0; i < n; ++i) {
    m[i] = as_number(masses[i], "chain.masses");
    if (!rates[i].is_array() || static_cast<Index>(rates[i].size()) != n) config_error("chain: rates must be square");
    for (Index j = 0; j < n; ++j) q(i, j) = as_number(rates[i][j], "chain.rates");
  }
  return validate_generator(std::move(q), std::move(m));
}

Diffusion1D parse_diffusion(const json& d) {
  const double a = as_number(require(d, "left", "diffusion"), "diffusion.left");
  const double b = as_number(require(d, "right", "diffusion"), "diffusion.right");
  if (!(a < b)) config_error("diffusion: left must be below right");
  double anchor;
  if (d.contains("anchor")) {
    anchor = as_number(d.at("anchor"), "diffusion.anchor");
  } else if (std::isfinite(a) && std::isfinite(b)) {
    anchor = 0.5 * (a + b);
  } else if (std::isfinite(a)) {
    anchor = a + 1.0;
  } else if (std::isfinite(b)) {
    anchor = b - 1.0;
  } else {
    anchor = 0.0;
  }
  const Expression drift = d.contains("drift") ? as_expression(d.at("drift"), "diffusion.drift") : Expression::constant(0.0);
  const Expression killing =
      d.contains("killing") ? as_expression(d.at("killing"), "diffusion.killing") : Expression::constant(0.0);
  return Diffusion1D(a, b, drift, killing, anchor);
}

void parse_grid(const json& g, GridOptions& o) {
  if (g.contains("states")) o.states = as_integer<Index>(g.at("states"), "grid.states", 2);
  if (g.contains("spacing")) {
    const auto s = as_string(g.at("spacing"), "grid.spacing");
    if (s == "uniform") o.spacing = Spacing::Uniform;
    else if (s == "graded") o.spacing = Spacing::Graded;
    else config_error("grid.spacing: expected 'uniform' or 'graded'");
  }
  if (g.contains("left_cutoff")) o.left_cutoff = as_number(g.at("left_cutoff"), "grid.left_cutoff");
  if (g.contains("right_cutoff")) o.right_cutoff = as_number(g.at("right_cutoff"), "grid.right_cutoff");
  if (g.contains("left_closure")) o.left_closure = as_closure(g.at("left_closure"), "grid.left_closure");
  if (g.contains("right_closure")) o.right_closure = as_closure(g.at("right_closure"), "grid.right_closure");
  if (g.contains("tail_mass")) {
    o.tail_mass = as_number(g.at("tail_mass"), "grid.tail_mass");
    if (!(o.tail_mass > 0.0 && o.tail_mass < 1.0)) config_error("grid.tail_mass must lie in (0, 1)");
  }
}

void parse_mc(const json& m, ProblemConfig& c) {
  if (m.contains("dt")) c.mc.dt = as_number(m.at("dt"), "mc.dt");
  if (m.contains("horizon")) c.mc.horizon = as_number(m.at("horizon"), "mc.horizon");
  if (m.contains("paths")) c.mc.n_paths = as_integer<std::int64_t>(m.at("paths"), "mc.paths", 1);
  if (m.contains("seed")) c.mc.seed = as_integer<std::uint64_t>(m.at("seed"), "mc.seed", 0);
  if (m.contains("threads")) c.mc.threads = as_integer<int>(m.at("threads"), "mc.threads", 1);
  if (m.contains("bridge_correction")) {
    if (!m.at("bridge_correction").is_boolean()) config_error("mc.bridge_correction: expected a boolean");
    c.mc.bridge_correction = m.at("bridge_correction").get<bool>();
  }
  if (m.contains("x0")) c.x0 = as_number(m.at("x0"), "mc.x0");
  if (m.contains("gamma")) c.gamma = as_number(m.at("gamma"), "mc.gamma");
  if (m.contains("times")) {
    if (!m.at("times").is_array() || m.at("times").empty()) config_error("mc.times: expected a nonempty array");
    c.times.clear();
    for (const auto& t : m.at("times")) c.times.push_back(as_number(t, "mc.times"));
  }
}

ProblemConfig load_config(const fs::path& path, const Flags& flags) {
  std::ifstream in(path);
  if (!in) config_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    config_error(e.what());
  }
  if (!j.is_object()) config_error("config must be a JSON object");

  ProblemConfig c;
  c.kind = as_string(require(j, "kind", "config"), "kind");
  const bool has_chain = j.contains("chain"), has_diffusion = j.contains("diffusion");
  if (has_chain && has_diffusion) config_error("config must carry exactly one of 'chain' and 'diffusion'");
  if (c.kind == "chain") {
    if (!has_chain) config_error("kind 'chain' needs a 'chain' payload");
    c.chain = parse_chain(j.at("chain"), path.parent_path());
  } else if (c.kind == "diffusion") {
    if (!has_diffusion) config_error("kind 'diffusion' needs a 'diffusion' payload");
    c.diffusion = parse_diffusion(j.at("diffusion"));
  } else {
    config_error("kind must be 'chain' or 'diffusion'");
  }
  if (j.contains("grid")) parse_grid(j.at("grid"), c.grid);
  if (j.contains("mc")) parse_mc(j.at("mc"), c);
  if (j.contains("output")) c.output = as_string(j.at("output"), "output");
  if (j.contains("tightness")) {
    const auto& t = j.at("tightness");
    if (t.contains("lo")) c.tight_lo = as_number(t.at("lo"), "tightness.lo");
    if (t.contains("hi")) c.tight_hi = as_number(t.at("hi"), "tightness.hi");
    if (t.contains("states")) {
      for (const auto& s : t.at("states")) c.tight_states.push_back(as_integer<Index>(s, "tightness.states", 0));
    }
  }
  if (j.contains("reference")) {
    const auto& r = j.at("reference");
    if (r.contains("density")) c.ref_density = as_expression(r.at("density"), "reference.density");
    if (r.contains("lambda0")) c.ref_lambda0 = as_number(r.at("lambda0"), "reference.lambda0");
  }

  if (flags.seed) c.mc.seed = *flags.seed;
  if (flags.grid_n) {
    if (*flags.grid_n < 2) config_error("--grid-n must be >= 2");
    c.grid.states = static_cast<Index>(*flags.grid_n);
  }
  if (flags.dt) c.mc.dt = *flags.dt;
  if (flags.paths) {
    if (*flags.paths < 1) config_error("--paths must be >= 1");
    c.mc.n_paths = *flags.paths;
  }
  if (flags.out) c.output = *flags.out;

  json overrides = json::object();
  if (flags.seed) overrides["seed"] = *flags.seed;
  if (flags.grid_n) overrides["grid_n"] = *flags.grid_n;
  if (flags.dt) overrides["dt"] = *flags.dt;
  if (flags.paths) overrides["paths"] = *flags.paths;
  overrides["tolerance_profile"] = flags.profile;
  c.digest = "fnv1a64:" + hex64(fnv1a64(j.dump() + "\n" + overrides.dump()));
  return c;
}

// ---------------------------------------------------------------- reports

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

struct StepReport {
  json outputs = json::object();
  json residuals = json::object();
  json checks = json::object();
  std::vector<Table> tables;

  void check(const std::string& name, double value, double tolerance) {
    residuals[name] = value;
    checks[name] = {{"value", value}, {"tolerance", tolerance}, {"pass", std::isfinite(value) && value <= tolerance}};
  }
  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const json& c) { return c.at("pass").get<bool>(); });
  }
};

json to_json(const VectorXd& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json to_json(const std::vector<double>& v) { return json(v); }

Table column_table(const std::string& name, const std::string& xname, const VectorXd& x, const std::string& yname,
                   const VectorXd& y) {
  Table t{name, {xname, yname}, {}};
  for (Index i = 0; i < y.size(); ++i) t.rows.push_back({x[i], y[i]});
  return t;
}

VectorXd state_indices(Index n) { return VectorXd::LinSpaced(n, 0.0, static_cast<double>(n - 1)); }

// ---------------------------------------------------------------- problem context

// Lazily computed objects shared by the steps of one run.
class Context {
 public:
  Context(const ProblemConfig& c, const Tolerances& tol) : cfg(c), tol(tol) {}

  const ProblemConfig& cfg;
  const Tolerances& tol;

  bool is_chain() const { return cfg.chain.has_value(); }
  const Diffusion1D& diffusion() const { return *cfg.diffusion; }

  const Grid& grid() {
    if (!grid_) grid_ = make_grid(diffusion(), cfg.grid);
    return *grid_;
  }
  const ReversibleGenerator& generator() {
    if (!gen_) gen_ = is_chain() ? *cfg.chain : discretize(diffusion(), grid());
    return *gen_;
  }
  const PrincipalEigenpair& eigenpair() {
    if (!eig_) eig_ = principal_eigenpair(generator());
    return *eig_;
  }
  /// The QSD; for diffusions this applies the class-(T) gate first.
  const QsdDensity& density() {
    if (!density_) density_ = qsd_density(diffusion(), cfg.grid);
    return *density_;
  }
  /// x-coordinates of the states (indices for a chain).
  VectorXd abscissae() {
    if (is_chain()) return state_indices(generator().size());
    return grid().nodes.segment(1, grid().states());
  }

 private:
  std::optional<Grid> grid_;
  std::optional<ReversibleGenerator> gen_;
  std::optional<PrincipalEigenpair> eig_;
  std::optional<QsdDensity> density_;
};

json grid_json(const Grid& g) {
  return {{"states", g.states()},
          {"left_node", g.nodes[0]},
          {"right_node", g.nodes[g.nodes.size() - 1]},
          {"left_closure", to_string(g.left)},
          {"right_closure", to_string(g.right)},
          {"left_truncated", g.left_truncated},
          {"right_truncated", g.right_truncated},
          {"left_tail_bound", g.left_tail_bound},
          {"right_tail_bound", g.right_tail_bound}};
}

json feller_json(const FellerIntegral& f) {
  return {{"finite", f.finite}, {"partial_sum", f.partial_sum}, {"blocks", f.blocks}};
}

// ---------------------------------------------------------------- steps

void run_classify(Context& ctx, StepReport& r) {
  if (ctx.is_chain()) {
    const auto& g = ctx.generator();
    const auto& k = g.killing();
    r.outputs["states"] = g.size();
    r.outputs["conservative"] = g.is_conservative();
    r.outputs["killed_states"] = (k.array() > 0.0).count();
    r.outputs["total_killing"] = k.sum();
    return;
  }
  const auto& d = ctx.diffusion();
  json ends = json::object();
  for (Side s : {Side::Left, Side::Right}) {
    const auto b = classify_boundary_report(d, s);
    ends[to_string(s)] = {{"class", to_string(b.cls)}, {"i", feller_json(b.i)}, {"j", feller_json(b.j)}};
  }
  const auto t = is_class_t(d);
  r.outputs["endpoints"] = ends;
  r.outputs["class_t"] = t.class_t;
  r.outputs["explosive"] = t.explosive;
}

void run_spectrum(Context& ctx, StepReport& r) {
  const auto& eig = ctx.eigenpair();
  r.outputs["lambda0"] = eig.lambda0;
  r.outputs["lambda1"] = eig.lambda1;
  r.outputs["gap"] = eig.gap();
  r.outputs["near_degenerate"] = eig.near_degenerate;
  if (!ctx.is_chain()) r.outputs["grid"] = grid_json(ctx.grid());
  r.check("eigen_residual", eig.residual, ctx.tol.eigen_residual);
  r.tables.push_back(column_table("spectrum", ctx.is_chain() ? "state" : "x", ctx.abscissae(), "phi0", eig.phi0));
}

void run_qsd(Context& ctx, StepReport& r) {
  if (ctx.is_chain()) {
    const auto q = qsd(ctx.generator(), ctx.eigenpair());
    r.outputs["lambda0"] = ctx.eigenpair().lambda0;
    r.outputs["nu"] = to_json(q.nu);
    r.tables.push_back(column_table("qsd", "state", ctx.abscissae(), "nu", q.nu));
    return;
  }
  const auto& q = ctx.density();
  r.outputs["lambda0"] = q.eig.lambda0;
  r.outputs["grid"] = grid_json(q.grid);
  if (q.truncation_sensitivity) r.outputs["truncation_sensitivity"] = *q.truncation_sensitivity;
  r.tables.push_back(column_table("qsd", "x", q.nodes, "density", q.density));
}

void run_verify_qsd(Context& ctx, StepReport& r) {
  const ReversibleGenerator* g = nullptr;
  VectorXd nu;
  double lambda0 = 0.0;
  std::optional<ReversibleGenerator> local;
  if (ctx.is_chain()) {
    g = &ctx.generator();
    nu = qsd(*g, ctx.eigenpair()).nu;
    lambda0 = ctx.eigenpair().lambda0;
  } else {
    const auto& q = ctx.density();
    local = discretize(ctx.diffusion(), q.grid);
    g = &*local;
    nu = q.qsd.nu;
    lambda0 = q.eig.lambda0;
  }
  r.outputs["lambda0"] = lambda0;

  const Semigroup p(*g);
  double invariance = 0.0;
  for (double t : {0.1, 1.0, 10.0}) {
    invariance = std::max(invariance, (conditional_law(p, nu, t).nu - nu).cwiseAbs().maxCoeff());
  }
  r.outputs["invariance_times"] = json::array({0.1, 1.0, 10.0});
  r.check("invariance", invariance, ctx.tol.invariance);

  if (ctx.is_chain() && g->size() <= 500) {
    const auto u = uniqueness_check(*g);
    r.outputs["nonnegative_left_eigenvectors"] = u.nonnegative_count;
    r.check("uniqueness", u.distance_to_qsd, ctx.tol.uniqueness);
  }
  if (ctx.cfg.ref_lambda0) {
    r.outputs["reference_lambda0"] = *ctx.cfg.ref_lambda0;
    r.check("lambda0_error", std::abs(lambda0 - *ctx.cfg.ref_lambda0), ctx.tol.lambda0_abs);
  }
  if (ctx.cfg.ref_density && !ctx.is_chain()) {
    const auto& q = ctx.density();
    VectorXd ref(q.nodes.size());
    for (Index i = 0; i < ref.size(); ++i) ref[i] = (*ctx.cfg.ref_density)(q.nodes[i]);
    r.check("density_l1", density_l1_distance(q.nodes, q.density, q.nodes, ref), ctx.tol.density_l1);
    r.tables.push_back(column_table("qsd_reference", "x", q.nodes, "reference", ref));
  }
}

VectorXd test_function(Index n) {
  VectorXd f(n);
  for (Index i = 0; i < n; ++i) f[i] = 1.0 + 0.5 * std::sin(static_cast<double>(i));
  return f;
}

void run_doob_check(Context& ctx, StepReport& r) {
  const auto& g = ctx.generator();
  const auto& eig = ctx.eigenpair();
  const auto dg = doob_transform(g, eig);
  r.check("row_sum", dg.max_row_sum, ctx.tol.row_sum);
  r.check("detailed_balance", dg.max_balance_defect, ctx.tol.balance);

  const VectorXd f = test_function(g.size());
  r.outputs["intertwining_time"] = ctx.tol.intertwining_time;
  r.check("intertwining", semigroup_intertwining_check(g, eig, ctx.tol.intertwining_time, f), ctx.tol.intertwining);

  const double t = ctx.tol.ergodic_time;
  const auto lim = ergodic_limit(dg, f, t);
  const double fmax = f.cwiseAbs().maxCoeff();
  // Below the floor the distance is rounding in the exponential, not decay.
  const double bound =
      std::max(std::exp(-lim.gap * t) * fmax * ctx.tol.ergodic_slack, ctx.tol.ergodic_floor * fmax);
  r.outputs["ergodic"] = {{"time", t}, {"gap_h", lim.gap}, {"limit", lim.limit}, {"distance", lim.distance},
                          {"bound", bound}};
  // Reported relative to the bound so one tolerance (1) applies to every problem.
  r.check("ergodic_ratio", bound > 0.0 ? lim.distance / bound : kInf, 1.0);
}

void run_tightness(Context& ctx, StepReport& r) {
  const auto& g = ctx.generator();
  StateSet k;
  if (ctx.is_chain()) {
    k = ctx.cfg.tight_states.empty() ? StateSet::range(0, (g.size() + 1) / 2) : StateSet(ctx.cfg.tight_states);
  } else {
    const auto& grid = ctx.grid();
    const Index n = grid.states();
    const double lo = ctx.cfg.tight_lo.value_or(grid.nodes[n / 4 + 1]);
    const double hi = ctx.cfg.tight_hi.value_or(grid.nodes[(3 * n) / 4]);
    r.outputs["k_interval"] = {lo, hi};
    k = states_between(grid, lo, hi);
  }
  const auto t = tightness_profile(g, k);
  r.outputs["k_states"] = k.states().size();
  r.outputs["sup"] = t.sup;
  r.tables.push_back(column_table("tightness", ctx.is_chain() ? "state" : "x", ctx.abscissae(), "value", t.values));
}

double start_point(Context& ctx) {
  const double x0 = ctx.cfg.x0.value_or(ctx.diffusion().anchor());
  return x0;
}

void run_yaglom(Context& ctx, StepReport& r) {
  if (ctx.is_chain()) throw Error(ErrorCode::InvalidInput, "yaglom needs a diffusion problem");
  const CellLaw ref = CellLaw::from_qsd(ctx.density());
  PathConfig cfg = ctx.cfg.mc;
  cfg.horizon = std::max(cfg.dt, *std::max_element(ctx.cfg.times.begin(), ctx.cfg.times.end()));
  const double x0 = start_point(ctx);
  const auto y = yaglom_estimate(ctx.diffusion(), InitialLaw::at(x0), cfg, ref, ctx.cfg.times);
  r.outputs["x0"] = x0;
  r.outputs["paths"] = cfg.n_paths;
  r.outputs["dt"] = cfg.dt;
  r.outputs["times"] = to_json(y.times);
  r.outputs["tv_distance"] = to_json(y.tv_distance);
  r.outputs["ci_halfwidth"] = to_json(y.ci_halfwidth);
  r.outputs["null_tv95"] = to_json(y.null_tv95);
  r.outputs["survivors"] = json(y.survivors);
  r.outputs["mann_kendall"] = {{"s", y.trend.s}, {"z", y.trend.z}, {"p_decreasing", y.trend.p_decreasing}};
  r.outputs["trend_decreasing"] = y.trend_decreasing;
  Table t{"yaglom", {"t", "value", "stderr"}, {}};
  for (std::size_t k = 0; k < y.times.size(); ++k) t.rows.push_back({y.times[k], y.tv_distance[k], y.ci_halfwidth[k]});
  r.tables.push_back(std::move(t));
}

void run_moments(Context& ctx, StepReport& r) {
  const auto& g = ctx.generator();
  const double lambda0 = ctx.eigenpair().lambda0;
  const double gamma = ctx.cfg.gamma.value_or(0.5 * lambda0);
  r.outputs["lambda0"] = lambda0;
  r.outputs["gamma"] = gamma;
  const VectorXd oracle = exp_lifetime_moments(g, gamma);
  r.tables.push_back(column_table("moments", ctx.is_chain() ? "state" : "x", ctx.abscissae(), "value", oracle));
  if (ctx.is_chain()) {
    r.outputs["moments"] = to_json(oracle);
    return;
  }
  const auto& grid = ctx.grid();
  const double x0 = start_point(ctx);
  const Index n = grid.states();
  const auto* it = std::lower_bound(grid.nodes.data() + 1, grid.nodes.data() + n + 1, x0);
  Index i = std::clamp<Index>((it - grid.nodes.data()) - 1, 0, n - 1);
  if (i > 0 && std::abs(grid.nodes[i] - x0) < std::abs(grid.nodes[i + 1] - x0)) --i;
  const double xs = grid.nodes[i + 1];
  const auto ens = simulate_killed_paths(ctx.diffusion(), InitialLaw::at(xs), ctx.cfg.mc);
  const auto m = exp_zeta_moment_estimate(ens, gamma);
  r.outputs["x0"] = xs;
  r.outputs["oracle"] = oracle[i];
  r.outputs["monte_carlo"] = {{"value", m.value},
                              {"std_error", m.std_error},
                              {"paths", ctx.cfg.mc.n_paths},
                              {"dt", ctx.cfg.mc.dt},
                              {"horizon", ctx.cfg.mc.horizon},
                              {"censored_fraction", m.censored_fraction},
                              {"censoring_bias_bound", m.censoring_bias_bound},
                              {"lambda0_estimate", m.lambda0_estimate}};
  r.check("mc_z", m.std_error > 0.0 ? std::abs(m.value - oracle[i]) / m.std_error : 0.0, ctx.tol.stderr_multiple);
}

using StepFn = void (*)(Context&, StepReport&);

const std::map<std::string, StepFn>& steps() {
  static const std::map<std::string, StepFn> s = {
      {"classify", run_classify},     {"spectrum", run_spectrum},   {"qsd", run_qsd},
      {"verify-qsd", run_verify_qsd}, {"doob-check", run_doob_check}, {"tightness", run_tightness},
      {"yaglom", run_yaglom},         {"moments", run_moments}};
  return s;
}

// Runs one step and returns (exit code, report section). Never throws on module errors.
std::pair<int, json> run_step(const std::string& name, Context& ctx, std::vector<Table>& tables) {
  StepReport r;
  json section;
  int code = 0;
  try {
    steps().at(name)(ctx, r);
    section["status"] = r.passed() ? "ok" : "fail";
    if (!r.passed()) {
      code = 2;
      section["error"] = {{"code", error_code_name(ErrorCode::VerificationFailed)},
                          {"message", "a residual exceeds its tolerance"}};
    }
  } catch (const Error& e) {
    code = is_contract_violation(e.code()) ? 2 : 1;
    section["status"] = "error";
    section["error"] = {{"code", error_code_name(e.code())}, {"message", e.what()}};
  }
  section["outputs"] = r.outputs;
  section["residuals"] = r.residuals;
  section["checks"] = r.checks;
  json files = json::array();
  for (auto& t : r.tables) {
    files.push_back(t.name + ".csv");
    tables.push_back(std::move(t));
  }
  section["tables"] = files;
  return {code, section};
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_table(const fs::path& dir, const Table& t) {
  std::ofstream out(dir / (t.name + ".csv"));
  out << "# qsd-lab csv schema " << kCsvSchemaVersion << "\n";
  for (std::size_t c = 0; c < t.columns.size(); ++c) out << (c ? "," : "") << t.columns[c];
  out << "\n";
  for (const auto& row : t.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << format_double(row[c]);
    out << "\n";
  }
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json base_report(const std::string& op) {
  json report;
  report["schema_version"] = kReportSchemaVersion;
  report["op"] = op;
  return report;
}

void write_report(const fs::path& dir, json report) {
  // The only field that differs between identical runs; kept last and apart.
  report["timestamp"] = utc_timestamp();
  std::ofstream(dir / "report.json") << report.dump(2) << "\n";
}

int run(const std::string& op, const fs::path& config_path, const Flags& flags) {
  json report = base_report(op);
  fs::path out = flags.out ? fs::path(*flags.out) : fs::path("qsd-lab-out");
  auto fail_input = [&](const Error& e) {
    report["status"] = "error";
    report["error"] = {{"code", error_code_name(e.code())}, {"message", e.what()}};
    std::cerr << "qsd-lab: " << e.what() << "\n";
    std::error_code ec;
    fs::create_directories(out, ec);
    if (!ec) write_report(out, report);
    return is_contract_violation(e.code()) ? 2 : 1;
  };

  if (std::find(kSubcommands.begin(), kSubcommands.end(), op) == kSubcommands.end()) {
    return fail_input(Error(ErrorCode::UnknownSubcommand, "'" + op + "' is not a subcommand"));
  }
  if (flags.profile != "default" && flags.profile != "strict") {
    return fail_input(Error(ErrorCode::ConfigParse, "--tolerance-profile must be 'strict' or 'default'"));
  }
  const Tolerances tol = tolerance_profile(flags.profile);

  std::optional<ProblemConfig> cfg;
  try {
    cfg = load_config(config_path, flags);
    cfg->mc.validate();
  } catch (const Error& e) {
    return fail_input(e);
  }
  out = cfg->output;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) {
    std::cerr << "qsd-lab: InvalidInput: cannot create output directory " << out.string() << "\n";
    return 1;
  }

  report["inputs"] = {{"config", config_path.filename().string()},
                      {"config_digest", cfg->digest},
                      {"kind", cfg->kind},
                      {"seed", cfg->mc.seed},
                      {"grid_n", cfg->grid.states},
                      {"dt", cfg->mc.dt},
                      {"paths", cfg->mc.n_paths}};
  report["tolerances"] = tol.to_json();
  report["tolerances"]["profile"] = flags.profile;
  report["provenance"] = {{"tool", "qsd-lab"},
                          {"version", QSDLAB_VERSION},
                          {"expression_grammar", kExpressionGrammarVersion},
                          {"config_digest", cfg->digest},
                          {"seed", cfg->mc.seed}};

  Context ctx(*cfg, tol);
  std::vector<Table> tables;
  int code = 0;
  if (op == "all") {
    std::vector<std::string> ladder = {"classify", "spectrum", "qsd", "verify-qsd", "doob-check", "tightness"};
    if (!ctx.is_chain()) ladder.push_back("yaglom");
    ladder.push_back("moments");
    json sections = json::object();
    json summary = json::object();
    for (const auto& name : ladder) {
      auto [c, section] = run_step(name, ctx, tables);
      summary[name] = section["status"];
      sections[name] = std::move(section);
      // An input error outranks a contract violation.
      if (c == 1 || code == 1) code = 1;
      else code = std::max(code, c);
    }
    report["status"] = code == 0 ? "ok" : "fail";
    report["summary"] = summary;
    report["steps"] = sections;
  } else {
    auto [c, section] = run_step(op, ctx, tables);
    code = c;
    for (auto it = section.begin(); it != section.end(); ++it) report[it.key()] = it.value();
  }
  for (const auto& t : tables) write_table(out, t);
  write_report(out, report);

  std::cout << op << ": " << report["status"].get<std::string>();
  if (report.contains("error")) std::cout << " (" << report["error"]["code"].get<std::string>() << ")";
  std::cout << " -> " << (out / "report.json").string() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qsd-lab: quasi-stationary distributions of killed Markov processes"};
  app.set_version_flag("--version", std::string(QSDLAB_VERSION));
  std::string op;
  std::string config;
  Flags flags;
  std::uint64_t seed = 0;
  long long grid_n = 0, paths = 0;
  double dt = 0.0;
  std::string out;
  app.add_option("subcommand", op, "classify | spectrum | qsd | verify-qsd | doob-check | tightness | yaglom | moments | all")
      ->required();
  app.add_option("config", config, "problem config (JSON)")->required();
  auto* seed_opt = app.add_option("--seed", seed, "Monte Carlo seed");
  auto* grid_opt = app.add_option("--grid-n", grid_n, "number of interior grid states");
  auto* dt_opt = app.add_option("--dt", dt, "Euler time step");
  auto* paths_opt = app.add_option("--paths", paths, "number of Monte Carlo paths");
  auto* out_opt = app.add_option("--out", out, "output directory");
  app.add_option("--tolerance-profile", flags.profile, "strict | default");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  if (*seed_opt) flags.seed = seed;
  if (*grid_opt) flags.grid_n = grid_n;
  if (*dt_opt) flags.dt = dt;
  if (*paths_opt) flags.paths = paths;
  if (*out_opt) flags.out = out;
  try {
    return run(op, config, flags);
  } catch (const std::exception& e) {
    std::cerr << "qsd-lab: " << e.what() << "\n";
    return 1;
  }
}
