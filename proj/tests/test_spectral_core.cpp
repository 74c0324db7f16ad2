#include <cmath>
#include <numbers>
#include <random>

#include <boost/math/quadrature/exp_sinh.hpp>

#include "doctest.h"
#include "qsdlab/error.hpp"
#include "qsdlab/matrix_exponential.hpp"
#include "qsdlab/spectral.hpp"

using namespace qsdlab;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

ReversibleGenerator make(std::initializer_list<std::initializer_list<double>> rows,
                         std::initializer_list<double> masses) {
  MatrixXd q(rows.size(), rows.size());
  Index i = 0;
  for (const auto& row : rows) {
    Index j = 0;
    for (double v : row) q(i, j++) = v;
    ++i;
  }
  VectorXd m(masses.size());
  i = 0;
  for (double v : masses) m(i++) = v;
  return validate_generator(q, m);
}

ReversibleGenerator single_state(double k) { return make({{-k}}, {1.0}); }

// ½ d²/dx² on (0, π) with Dirichlet ends, n interior nodes, m = h.
ReversibleGenerator dirichlet_laplacian(Index n) {
  const double h = std::numbers::pi / static_cast<double>(n + 1);
  MatrixXd q = MatrixXd::Zero(n, n);
  const double rate = 0.5 / (h * h);
  for (Index i = 0; i < n; ++i) {
    q(i, i) = -2.0 * rate;
    if (i > 0) q(i, i - 1) = rate;
    if (i + 1 < n) q(i, i + 1) = rate;
  }
  return validate_generator(q, VectorXd::Constant(n, h));
}

double sup(const VectorXd& v) { return v.cwiseAbs().maxCoeff(); }

StateSet random_nonempty_subset(Index n, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.3);
  std::vector<Index> s;
  for (Index i = 0; i < n; ++i)
    if (coin(rng)) s.push_back(i);
  if (s.empty()) s.push_back(static_cast<Index>(rng() % static_cast<std::uint64_t>(n)));
  return StateSet(s);
}

}  // namespace

TEST_SUITE("validate_generator") {
  TEST_CASE("symmetric two-state chain with killing") {
    const auto g = make({{-2, 1}, {1, -2}}, {1, 1});
    CHECK(g.killing()(0) == doctest::Approx(1.0));
    CHECK(g.killing()(1) == doctest::Approx(1.0));
  }
  TEST_CASE("detailed balance with unequal masses") {
    const auto g = make({{-1, 1}, {2, -2}}, {2, 1});
    CHECK(g.killing().cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.is_conservative());
  }
  TEST_CASE("error paths") {
    auto code_of = [](auto&& fn) {
      try {
        fn();
      } catch (const Error& e) {
        return e.code();
      }
      return ErrorCode::InvalidInput;
    };
    CHECK(code_of([] { make({{-1, 1}, {1, -1}}, {1, 2}); }) == ErrorCode::NonSymmetric);
    CHECK(code_of([] { make({{-1, -0.5}, {-0.5, -1}}, {1, 1}); }) == ErrorCode::NegativeRate);
    CHECK(code_of([] { make({{-1, 2}, {2, -1}}, {1, 1}); }) == ErrorCode::PositiveRowSum);
    CHECK(code_of([] { make({{-1, 0}, {0, -1}}, {1, 1}); }) == ErrorCode::Reducible);
    CHECK_THROWS_AS(make({{-1, 0}, {0, -1}}, {1}), Error);
    CHECK_THROWS_AS(make({{-1}}, {0.0}), Error);
  }
  TEST_CASE("random generators are valid and irreducible") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto g = make_random_generator(20, seed);
      CHECK_FALSE(g.is_conservative());
    }
  }
}

TEST_SUITE("principal_eigenpair") {
  TEST_CASE("single state") {
    const auto eig = principal_eigenpair(single_state(3.0));
    CHECK(eig.lambda0 == doctest::Approx(3.0));
    CHECK(eig.phi0(0) == doctest::Approx(1.0));
    CHECK(std::isnan(eig.lambda1));
  }
  TEST_CASE("two-state equal killing: lambda0 = k, lambda1 = 2a + k") {
    const double a = 0.7;
    const double k = 0.3;
    const auto eig = principal_eigenpair(make({{-a - k, a}, {a, -a - k}}, {1, 1}));
    CHECK(eig.lambda0 == doctest::Approx(k).epsilon(1e-13));
    CHECK(eig.lambda1 == doctest::Approx(2 * a + k).epsilon(1e-13));
    CHECK(eig.phi0(0) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(eig.phi0(1) == doctest::Approx(1.0 / std::sqrt(2.0)));
  }
  TEST_CASE("Dirichlet Laplacian on (0, pi) with 2000 cells") {
    const auto g = dirichlet_laplacian(2000);
    const auto eig = principal_eigenpair(g);
    CHECK(std::abs(eig.lambda0 - 0.5) <= 1e-3);
    // φ0 ∝ sin(x_i) on the nodes.
    const double h = std::numbers::pi / 2001.0;
    VectorXd s(2000);
    for (Index i = 0; i < 2000; ++i) s(i) = std::sin(h * static_cast<double>(i + 1));
    s /= std::sqrt(s.cwiseAbs2().dot(g.masses()));
    CHECK(sup(eig.phi0 - s) <= 1e-8);
  }
  TEST_CASE("shift-and-invert agrees with the dense solver") {
    const auto g = dirichlet_laplacian(300);
    const auto dense = principal_eigenpair(g, EigenMethod::Dense);
    const auto sparse = principal_eigenpair(g, EigenMethod::ShiftInvert);
    CHECK(sparse.lambda0 == doctest::Approx(dense.lambda0).epsilon(1e-12));
    CHECK(sparse.lambda1 == doctest::Approx(dense.lambda1).epsilon(1e-9));
    CHECK(sup(sparse.phi0 - dense.phi0) <= 1e-8);
  }
  TEST_CASE("Rayleigh minimality over random vectors") {
    std::mt19937_64 rng(42);
    std::normal_distribution<double> normal;
    const auto g = make_random_generator(20, 5);
    const auto eig = principal_eigenpair(g);
    CHECK(eig.lambda0 > 0.0);
    CHECK((eig.phi0.array() > 0.0).all());
    for (int rep = 0; rep < 1000; ++rep) {
      VectorXd u(20);
      for (auto& v : u) v = normal(rng);
      const VectorXd mu = g.masses().cwiseProduct(u);
      const double quotient = (-(g.rates() * u)).dot(mu) / u.dot(mu);
      CHECK(quotient >= eig.lambda0 - 1e-12);
    }
  }
}

TEST_SUITE("semigroup") {
  TEST_CASE("t = 0 is the identity") {
    const auto g = make_random_generator(6, 1);
    const VectorXd f = VectorXd::LinSpaced(6, -1, 1);
    CHECK(sup(semigroup_apply(g, 0.0, f) - f) == 0.0);
  }
  TEST_CASE("single state decays exponentially") {
    const auto g = single_state(0.8);
    CHECK(semigroup_apply(g, 2.5, VectorXd::Constant(1, 3.0))(0) ==
          doctest::Approx(3.0 * std::exp(-2.0)).epsilon(1e-14));
  }
  TEST_CASE("conservative chain preserves constants") {
    const auto g = make({{-1, 0.5, 0.5}, {1, -2, 1}, {0.25, 0.25, -0.5}}, {1, 0.5, 2});
    CHECK(sup(semigroup_apply(g, 5.0, VectorXd::Ones(3)) - VectorXd::Ones(3)) <= 1e-12);
  }
  TEST_CASE("Pade and spectral routes agree") {
    const auto g = make_random_generator(30, 9);
    const VectorXd f = VectorXd::LinSpaced(30, 0, 2);
    for (double t : {0.1, 1.0, 7.0}) {
      const VectorXd a = semigroup_apply(g, t, f, SemigroupMethod::Pade);
      const VectorXd b = semigroup_apply(g, t, f, SemigroupMethod::Spectral);
      CHECK(sup(a - b) <= 1e-12);
    }
  }
  TEST_CASE("negative time is rejected") {
    CHECK_THROWS_AS(semigroup_apply(single_state(1), -1.0, VectorXd::Ones(1)), Error);
  }
}

TEST_SUITE("resolvent") {
  TEST_CASE("scalar inversion") {
    CHECK(resolvent(single_state(2.0), 1.0, VectorXd::Ones(1))(0) == doctest::Approx(1.0 / 3.0));
  }
  TEST_CASE("linearity at zero") {
    const auto g = make_random_generator(10, 2);
    CHECK(sup(resolvent(g, 1.0, VectorXd::Zero(10))) == 0.0);
  }
  TEST_CASE("R_1 1 = 1 on a conservative chain") {
    const auto g = make({{-1, 0.5, 0.5}, {1, -2, 1}, {0.25, 0.25, -0.5}}, {1, 0.5, 2});
    CHECK(sup(resolvent(g, 1.0, VectorXd::Ones(3)) - VectorXd::Ones(3)) <= 1e-13);
  }
  TEST_CASE("matches time quadrature of e^{-alpha t} p_t f") {
    const auto g = make_random_generator(5, 4);
    const VectorXd f = VectorXd::LinSpaced(5, 1, 2);
    const double alpha = 0.6;
    boost::math::quadrature::exp_sinh<double> integrator;
    const VectorXd r = resolvent(g, alpha, f);
    for (Index x = 0; x < 5; ++x) {
      const double expected = integrator.integrate([&](double t) {
        if (t > 200.0) return 0.0;
        return std::exp(-alpha * t) * (qsdlab::matrix_exponential(t * g.rates()) * f)(x);
      });
      CHECK(r(x) == doctest::Approx(expected).epsilon(1e-9));
    }
  }
  TEST_CASE("alpha must be positive") {
    CHECK_THROWS_AS(resolvent(single_state(1), 0.0, VectorXd::Ones(1)), Error);
  }
}

TEST_SUITE("feynman_kac_resolvent") {
  TEST_CASE("single state recovers the ground state") {
    const double k = 1.7;
    const auto g = single_state(k);
    const auto eig = principal_eigenpair(g);
    const VectorXd out = feynman_kac_resolvent(g, StateSet::all(1), eig.lambda0, 0.0, eig.phi0);
    CHECK(out(0) == doctest::Approx(eig.phi0(0)));
  }
  TEST_CASE("empty K reduces to the plain resolvent") {
    const auto g = make_random_generator(12, 3);
    const VectorXd f = VectorXd::LinSpaced(12, -1, 3);
    CHECK(sup(feynman_kac_resolvent(g, StateSet{}, 0.0, 1.0, f) - resolvent(g, 1.0, f)) <= 1e-13);
  }
  TEST_CASE("ground state is reproduced from its values on K") {
    const auto g = make_random_generator(20, 77);
    const auto eig = principal_eigenpair(g);
    const StateSet k = StateSet::range(0, 10);
    const VectorXd rhs = eig.phi0.cwiseProduct(k.indicator(20));
    CHECK(sup(feynman_kac_resolvent(g, k, eig.lambda0, 0.0, rhs) - eig.phi0) <= 1e-10);
  }
  TEST_CASE("lambda0 shift without killing on K is singular") {
    const auto g = make_random_generator(8, 3);
    const auto eig = principal_eigenpair(g);
    try {
      feynman_kac_resolvent(g, StateSet{}, eig.lambda0 + 0.1, 0.0, VectorXd::Ones(8));
      FAIL("expected NotPositiveDefinite");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NotPositiveDefinite);
    }
  }
  TEST_CASE("sup R^{lambda0,K} 1 is finite") {
    const auto g = make_random_generator(20, 12);
    const auto eig = principal_eigenpair(g);
    const VectorXd r = feynman_kac_resolvent(g, StateSet::range(5, 15), eig.lambda0, 0.0, VectorXd::Ones(20));
    CHECK(r.allFinite());
    CHECK(r.minCoeff() > 0.0);
  }
}

TEST_SUITE("perturbed_principal_eigenvalue") {
  TEST_CASE("empty B") {
    const auto g = make_random_generator(15, 8);
    CHECK(perturbed_principal_eigenvalue(g, StateSet{}) ==
          doctest::Approx(principal_eigenpair(g).lambda0).epsilon(1e-12));
  }
  TEST_CASE("single state shift") {
    CHECK(perturbed_principal_eigenvalue(single_state(2.0), StateSet::all(1)) == doctest::Approx(3.0));
  }
  TEST_CASE("strict increase over random sweeps") {
    std::mt19937_64 rng(2024);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const auto g = make_random_generator(20, seed);
      const double l0 = principal_eigenpair(g).lambda0;
      CHECK(perturbed_principal_eigenvalue(g, random_nonempty_subset(20, rng)) - l0 > 1e-8);
    }
  }
}

TEST_SUITE("exp_lifetime_moment") {
  TEST_CASE("gamma = 0") {
    CHECK(exp_lifetime_moment(make_random_generator(5, 1), 0.0, 2) == 1.0);
  }
  TEST_CASE("single state matches the exponential MGF") {
    const double k = 2.0;
    for (double gamma : {0.1, 1.0, 1.9}) {
      CHECK(exp_lifetime_moment(single_state(k), gamma, 0) == doctest::Approx(k / (k - gamma)));
    }
  }
  TEST_CASE("matches quadrature of e^{gamma t} survival at 0.9 lambda0") {
    boost::math::quadrature::exp_sinh<double> integrator;
    for (const auto& g : {make({{-1.2, 0.7}, {0.7, -1.2}}, {1, 1}), make({{-2, 1}, {1, -1.5}}, {1, 1}),
                          make_random_generator(4, 31)}) {
      const double gamma = 0.9 * principal_eigenpair(g).lambda0;
      const VectorXd moments = exp_lifetime_moments(g, gamma);
      for (Index x = 0; x < g.size(); ++x) {
        const double tail = integrator.integrate([&](double t) {
          if (gamma * t > 700.0) return 0.0;
          return std::exp(gamma * t) * (qsdlab::matrix_exponential(t * g.rates()) * VectorXd::Ones(g.size()))(x);
        });
        CHECK(std::abs(moments(x) - (1.0 + gamma * tail)) <= 1e-8 * moments(x));
      }
    }
  }
  TEST_CASE("gamma at lambda0 is rejected") {
    const auto g = make_random_generator(6, 2);
    const double l0 = principal_eigenpair(g).lambda0;
    try {
      exp_lifetime_moment(g, l0, 0);
      FAIL("expected rejection");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::GammaAtOrAboveLambda0);
    }
    CHECK_THROWS_AS(exp_lifetime_moment(g, 2 * l0, 0), Error);
  }
}

TEST_SUITE("qsd and conditional_law") {
  TEST_CASE("single state") { CHECK(qsd(single_state(1.0)).nu(0) == 1.0); }
  TEST_CASE("symmetric two-state chain") {
    const auto nu = qsd(make({{-1.5, 1}, {1, -1.5}}, {1, 1})).nu;
    CHECK(nu(0) == doctest::Approx(0.5));
    CHECK(nu(1) == doctest::Approx(0.5));
  }
  TEST_CASE("two-state chain with killing (1, 0.5) by hand") {
    // -Q = [[2,-1],[-1,1.5]]: λ0 = (3.5 - √4.25)/2, eigenvector (1, 2 - λ0).
    const double l0 = (3.5 - std::sqrt(4.25)) / 2.0;
    const double ratio = 2.0 - l0;
    const auto g = make({{-2, 1}, {1, -1.5}}, {1, 1});
    CHECK(principal_eigenpair(g).lambda0 == doctest::Approx(l0).epsilon(1e-14));
    const auto nu = qsd(g).nu;
    CHECK(nu(0) == doctest::Approx(1.0 / (1.0 + ratio)).epsilon(1e-13));
    CHECK(nu(1) == doctest::Approx(ratio / (1.0 + ratio)).epsilon(1e-13));
  }
  TEST_CASE("conservative chain has no QSD") {
    const auto g = make({{-1, 1}, {2, -2}}, {2, 1});
    try {
      qsd(g);
      FAIL("expected ConservativeChain");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ConservativeChain);
    }
  }
  TEST_CASE("t = 0 returns the initial law") {
    const auto g = make_random_generator(5, 3);
    const VectorXd nu = VectorXd::Constant(5, 0.2);
    CHECK(sup(conditional_law(g, nu, 0.0).nu - nu) == 0.0);
  }
  TEST_CASE("QSD is a fixed point and survival decays at rate lambda0") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto g = make_random_generator(20, seed);
      const auto eig = principal_eigenpair(g);
      const VectorXd nu = qsd(g, eig).nu;
      const Semigroup p(g);
      for (double t : {0.1, 0.5, 1.0, 5.0, 10.0}) {
        CHECK(sup(conditional_law(p, nu, t).nu - nu) <= 1e-10);
        CHECK(-std::log(survival_probability(p, t, nu)) / t == doctest::Approx(eig.lambda0).epsilon(1e-10));
      }
    }
  }
  TEST_CASE("point mass converges at the spectral gap rate") {
    const auto g = make_random_generator(8, 6);
    const auto eig = principal_eigenpair(g);
    const VectorXd nu = qsd(g, eig).nu;
    VectorXd delta = VectorXd::Zero(8);
    delta(3) = 1.0;
    const Semigroup p(g);
    // TV(t) e^{gap t} should settle to a constant once higher modes are gone.
    std::vector<double> scaled;
    for (double t : {60.0, 80.0, 100.0}) {
      const double tv = 0.5 * (conditional_law(p, delta, t).nu - nu).cwiseAbs().sum();
      scaled.push_back(tv * std::exp(eig.gap() * t));
    }
    CHECK(scaled[1] == doctest::Approx(scaled[0]).epsilon(0.05));
    CHECK(scaled[2] == doctest::Approx(scaled[1]).epsilon(0.05));
  }
  TEST_CASE("extinct mass is reported") {
    const auto g = single_state(100.0);
    try {
      conditional_law(g, VectorXd::Ones(1), 10.0);
      FAIL("expected ExtinctMass");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ExtinctMass);
    }
  }
}

TEST_SUITE("doob_transform") {
  TEST_CASE("single state becomes conservative") {
    const auto g = single_state(2.0);
    const auto dg = doob_transform(g, principal_eigenpair(g));
    CHECK(dg.rates(0, 0) == 0.0);
  }
  TEST_CASE("equal killing is removed exactly") {
    const double a = 0.4;
    const double k = 1.1;
    const auto g = make({{-a - k, a}, {a, -a - k}}, {1, 1});
    const auto dg = doob_transform(g, principal_eigenpair(g));
    MatrixXd expected = g.rates() + k * MatrixXd::Identity(2, 2);
    CHECK((dg.rates - expected).cwiseAbs().maxCoeff() <= 1e-13);
  }
  TEST_CASE("conservative and reversible for random inputs") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto g = make_random_generator(20, seed);
      const auto dg = doob_transform(g, principal_eigenpair(g));
      CHECK(dg.max_row_sum <= 1e-12);
      CHECK(dg.max_balance_defect <= 1e-12);
      CHECK((dg.rates.diagonal().array() <= 0.0).all());
    }
  }
  TEST_CASE("inconsistent eigenpair is rejected") {
    const auto g = make_random_generator(5, 1);
    auto eig = principal_eigenpair(g);
    eig.lambda0 += 0.1;
    CHECK_THROWS_AS(doob_transform(g, eig), Error);
  }
  TEST_CASE("intertwining identity") {
    const auto g1 = single_state(0.9);
    CHECK(semigroup_intertwining_check(g1, principal_eigenpair(g1), 2.0, VectorXd::Ones(1)) <= 1e-15);
    const auto g = make_random_generator(20, 99);
    const auto eig = principal_eigenpair(g);
    const VectorXd f = VectorXd::LinSpaced(20, -2, 5);
    CHECK(semigroup_intertwining_check(g, eig, 0.0, f) == 0.0);
    for (double t : {0.5, 3.0, 10.0}) CHECK(semigroup_intertwining_check(g, eig, t, f) <= 1e-9);
    for (double t : {0.5, 3.0, 10.0}) {
      CHECK(semigroup_intertwining_check(g, eig, t, f, SemigroupMethod::Spectral) <= 1e-9);
    }
  }
}

TEST_SUITE("ergodic_limit") {
  TEST_CASE("constants are invariant") {
    const auto g = make_random_generator(10, 5);
    const auto dg = doob_transform(g, principal_eigenpair(g));
    const auto out = ergodic_limit(dg, VectorXd::Constant(10, 2.5), 3.0);
    CHECK(out.limit == doctest::Approx(2.5));
    CHECK(out.distance <= 1e-12);
  }
  TEST_CASE("two-state Doob chain decays at rate 2a") {
    const double a = 0.35;
    const auto g = make({{-a - 1, a}, {a, -a - 1}}, {1, 1});
    const auto dg = doob_transform(g, principal_eigenpair(g));
    VectorXd f(2);
    f << 1.0, 0.0;
    for (double t : {0.0, 0.5, 2.0, 6.0}) {
      const auto out = ergodic_limit(dg, f, t);
      CHECK(out.limit == doctest::Approx(0.5));
      CHECK(out.distance == doctest::Approx(0.5 * std::exp(-2 * a * t)).epsilon(1e-10));
    }
  }
  TEST_CASE("1_K / phi0 converges to the phi0 m-mass of K") {
    const auto g = make_random_generator(50, 13);
    const auto eig = principal_eigenpair(g);
    const auto dg = doob_transform(g, eig);
    const StateSet k = StateSet::range(10, 30);
    const VectorXd f = k.indicator(50).cwiseQuotient(eig.phi0);
    const double expected = eig.phi0.cwiseProduct(g.masses()).dot(k.indicator(50));
    const auto out = ergodic_limit(dg, f, 400.0);
    CHECK(out.limit == doctest::Approx(expected).epsilon(1e-12));
    CHECK(out.distance <= std::max(1e-9, 10 * std::exp(-out.gap * 400.0) * sup(f)) + 1e-12);
  }
  TEST_CASE("non-conservative input is rejected") {
    DoobGenerator dg;
    dg.rates = MatrixXd::Constant(1, 1, -1.0);
    dg.masses = VectorXd::Ones(1);
    CHECK_THROWS_AS(ergodic_limit(dg, VectorXd::Ones(1), 1.0), Error);
  }
}

TEST_SUITE("uniqueness_check") {
  TEST_CASE("single state") {
    const auto r = uniqueness_check(single_state(1.0));
    CHECK(r.nonnegative_count == 1);
  }
  TEST_CASE("random two-state chains") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.05, 2.0);
    for (int rep = 0; rep < 100; ++rep) {
      const double m0 = u(rng), m1 = u(rng), c = u(rng);
      const double k0 = u(rng), k1 = rep % 3 == 0 ? 0.0 : u(rng);
      const auto g = make({{-c / m0 - k0, c / m0}, {c / m1, -c / m1 - k1}}, {m0, m1});
      const auto r = uniqueness_check(g);
      CHECK(r.nonnegative_count == 1);
      CHECK(r.distance_to_qsd <= 1e-10);
    }
  }
  TEST_CASE("discrete Dirichlet Laplacian gives the sine profile") {
    const Index n = 20;
    const auto r = uniqueness_check(dirichlet_laplacian(n));
    const double h = std::numbers::pi / static_cast<double>(n + 1);
    VectorXd s(n);
    for (Index i = 0; i < n; ++i) s(i) = std::sin(h * static_cast<double>(i + 1)) * h;
    s /= s.sum();
    CHECK(sup(r.eigenvector - s) <= 1e-10);
    CHECK(r.distance_to_qsd <= 1e-10);
  }
}
