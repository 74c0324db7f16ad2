#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <limits>
#include <string>

#include "qsdlab/diffusion1d.hpp"
#include "qsdlab/error.hpp"
#include "qsdlab/montecarlo.hpp"
#include "qsdlab/spectral.hpp"

namespace py = pybind11;
using namespace qsdlab;

namespace {

Side side_from(const std::string& s) {
  if (s == "left") return Side::Left;
  if (s == "right") return Side::Right;
  throw Error(ErrorCode::InvalidInput, "side must be 'left' or 'right'");
}

Diffusion1D make_diffusion(double left, double right, const std::string& drift, const std::string& killing,
                           std::optional<double> anchor) {
  double c;
  if (anchor) c = *anchor;
  else if (std::isfinite(left) && std::isfinite(right)) c = 0.5 * (left + right);
  else if (std::isfinite(left)) c = left + 1.0;
  else if (std::isfinite(right)) c = right - 1.0;
  else c = 0.0;
  return Diffusion1D(left, right, Expression::parse(drift), Expression::parse(killing), c);
}

GridOptions grid_options(Eigen::Index states, std::optional<double> left_cutoff, std::optional<double> right_cutoff) {
  GridOptions o;
  o.states = states;
  o.left_cutoff = left_cutoff;
  o.right_cutoff = right_cutoff;
  return o;
}

}  // namespace

PYBIND11_MODULE(_qsdlab, m) {
  m.doc() = "Quasi-stationary distributions of killed reversible Markov processes";

  static py::exception<Error> error(m, "QsdlabError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = error;
      py::object instance = exc(e.what());
      instance.attr("code") = std::string(error_code_name(e.code()));
      PyErr_SetObject(error.ptr(), instance.ptr());
    }
  });

  py::class_<ReversibleGenerator>(m, "ReversibleGenerator")
      .def_property_readonly("rates", &ReversibleGenerator::rates)
      .def_property_readonly("masses", &ReversibleGenerator::masses)
      .def_property_readonly("killing", &ReversibleGenerator::killing)
      .def_property_readonly("size", &ReversibleGenerator::size)
      .def("is_conservative", &ReversibleGenerator::is_conservative);

  m.def("validate_generator", &validate_generator, py::arg("rates"), py::arg("masses"), py::arg("tolerance") = 1e-12);
  m.def("make_random_generator",
        [](Eigen::Index n, std::uint64_t seed) { return make_random_generator(n, seed); }, py::arg("n"),
        py::arg("seed"));

  py::class_<PrincipalEigenpair>(m, "PrincipalEigenpair")
      .def_readonly("lambda0", &PrincipalEigenpair::lambda0)
      .def_readonly("phi0", &PrincipalEigenpair::phi0)
      .def_readonly("lambda1", &PrincipalEigenpair::lambda1)
      .def_readonly("residual", &PrincipalEigenpair::residual)
      .def_property_readonly("gap", &PrincipalEigenpair::gap);

  py::class_<DoobGenerator>(m, "DoobGenerator")
      .def_readonly("rates", &DoobGenerator::rates)
      .def_readonly("masses", &DoobGenerator::masses)
      .def_readonly("max_row_sum", &DoobGenerator::max_row_sum)
      .def_readonly("max_balance_defect", &DoobGenerator::max_balance_defect);

  m.def("principal_eigenpair", [](const ReversibleGenerator& g) { return principal_eigenpair(g); });
  m.def("qsd", [](const ReversibleGenerator& g) { return qsd(g).nu; });
  m.def("conditional_law",
        [](const ReversibleGenerator& g, const Eigen::VectorXd& nu, double t) { return conditional_law(g, nu, t).nu; },
        py::arg("g"), py::arg("nu"), py::arg("t"));
  m.def("semigroup_apply",
        [](const ReversibleGenerator& g, double t, const Eigen::VectorXd& f) { return semigroup_apply(g, t, f); },
        py::arg("g"), py::arg("t"), py::arg("f"));
  m.def("exp_lifetime_moments", &exp_lifetime_moments, py::arg("g"), py::arg("gamma"));
  m.def("doob_transform", &doob_transform, py::arg("g"), py::arg("eig"));
  m.def(
      "uniqueness_check",
      [](const ReversibleGenerator& g) {
        const auto u = uniqueness_check(g);
        py::dict d;
        d["nonnegative_count"] = u.nonnegative_count;
        d["eigenvector"] = u.eigenvector;
        d["eigenvalue"] = u.eigenvalue;
        d["distance_to_qsd"] = u.distance_to_qsd;
        return d;
      },
      py::arg("g"));

  py::class_<Diffusion1D>(m, "Diffusion1D")
      .def(py::init(&make_diffusion), py::arg("left"), py::arg("right"), py::arg("drift") = "0",
           py::arg("killing") = "0", py::arg("anchor") = py::none())
      .def_property_readonly("left", &Diffusion1D::left)
      .def_property_readonly("right", &Diffusion1D::right)
      .def_property_readonly("anchor", &Diffusion1D::anchor)
      .def("q", &Diffusion1D::q)
      .def("v", &Diffusion1D::v);

  m.def(
      "classify_boundary",
      [](const Diffusion1D& d, const std::string& side) { return std::string(to_string(classify_boundary(d, side_from(side)))); },
      py::arg("d"), py::arg("side"));
  m.def(
      "is_class_t",
      [](const Diffusion1D& d) {
        const auto r = is_class_t(d);
        py::dict out;
        out["left"] = std::string(to_string(r.left));
        out["right"] = std::string(to_string(r.right));
        out["class_t"] = r.class_t;
        out["explosive"] = r.explosive;
        return out;
      },
      py::arg("d"));
  m.def(
      "qsd_density",
      [](const Diffusion1D& d, Eigen::Index states, std::optional<double> left_cutoff,
         std::optional<double> right_cutoff) {
        const auto q = qsd_density(d, grid_options(states, left_cutoff, right_cutoff));
        py::dict out;
        out["lambda0"] = q.eig.lambda0;
        out["nodes"] = q.nodes;
        out["density"] = q.density;
        out["truncation_sensitivity"] = q.truncation_sensitivity;
        return out;
      },
      py::arg("d"), py::arg("states") = 2000, py::arg("left_cutoff") = py::none(),
      py::arg("right_cutoff") = py::none());
  m.def(
      "discretize",
      [](const Diffusion1D& d, Eigen::Index states, std::optional<double> left_cutoff,
         std::optional<double> right_cutoff) {
        const auto grid = make_grid(d, grid_options(states, left_cutoff, right_cutoff));
        return py::make_tuple(Eigen::VectorXd(grid.nodes.segment(1, grid.states())), discretize(d, grid));
      },
      py::arg("d"), py::arg("states") = 2000, py::arg("left_cutoff") = py::none(),
      py::arg("right_cutoff") = py::none());

  m.def(
      "yaglom",
      [](const Diffusion1D& d, double x0, const std::vector<double>& times, std::int64_t paths, double dt,
         std::uint64_t seed, Eigen::Index states) {
        const CellLaw ref = CellLaw::from_qsd(qsd_density(d, grid_options(states, std::nullopt, std::nullopt)));
        PathConfig cfg;
        cfg.dt = dt;
        cfg.n_paths = paths;
        cfg.seed = seed;
        cfg.horizon = std::max(dt, *std::max_element(times.begin(), times.end()));
        const auto y = yaglom_estimate(d, InitialLaw::at(x0), cfg, ref, times);
        py::dict out;
        out["times"] = y.times;
        out["tv_distance"] = y.tv_distance;
        out["ci_halfwidth"] = y.ci_halfwidth;
        out["null_tv95"] = y.null_tv95;
        out["trend_decreasing"] = y.trend_decreasing;
        return out;
      },
      py::arg("d"), py::arg("x0"), py::arg("times"), py::arg("paths") = 100000, py::arg("dt") = 0.01,
      py::arg("seed") = 0, py::arg("states") = 2000);
}
