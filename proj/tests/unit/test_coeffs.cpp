#include "rblod/coeffs.hpp"
#include "rblod/errors.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

using namespace rblod;

namespace {

AffineCoefficient single_term(std::function<Matrix2(const Point&)> field) {
  AffineCoefficient c;
  c.theta = {[](double) { return 1.0; }};
  c.field_at = [field](int, const Point& x) { return field(x); };
  return c;
}

}  // namespace

TEST_CASE("oscillating fields at the origin") {
  const double pi = std::numbers::pi;
  const Matrix2 a0 = oscillating_field(0, Point(0, 0), 0.1);
  CHECK(a0(0, 0) == doctest::Approx(5.0 / (6.0 * pi * pi)).epsilon(1e-14));
  CHECK(a0(1, 1) == doctest::Approx(7.5 / (4.0 * pi)).epsilon(1e-14));
  CHECK(a0(0, 1) == 0.0);
  CHECK(oscillating_field(1, Point(0, 0), 0.1)(0, 0) == doctest::Approx(0.1));
  // floor terms vanish: 3/25 + (sin 0 + cos 0)/20
  CHECK(oscillating_field(2, Point(0, 0), 0.1)(0, 0) == doctest::Approx(3.0 / 25.0 + 1.0 / 20.0));
  CHECK_THROWS_AS(oscillating_field(4, Point(0, 0), 0.1), std::invalid_argument);
}

TEST_CASE("fields are symmetric and the mp1 coefficient is coercive") {
  const ProblemDefinition p = model_problem_1();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const Point x(u(rng), u(rng));
    for (int q = 0; q < 4; ++q) {
      const Matrix2 a = oscillating_field(q, x, 0.1);
      CHECK(a(0, 1) == a(1, 0));
    }
    CHECK(min_eigenvalue(p.coefficient.evaluate(x, 5.0 * u(rng))) > 0.0);
  }
}

TEST_CASE("mp1 theta functions") {
  const ProblemDefinition p = model_problem_1();
  const auto th = p.coefficient.thetas(0.0);
  CHECK(th[0] == doctest::Approx(2.0));
  CHECK(th[1] == doctest::Approx(1.0));
  CHECK(th[2] == doctest::Approx(3.0));
  CHECK(th[3] == doctest::Approx(1.0));
  CHECK(p.parameter_domain.lower == 0.0);
  CHECK(p.parameter_domain.upper == 5.0);
  CHECK(p.parameter_domain.clamp(7.0) == 5.0);
  CHECK_FALSE(p.coefficient.has_derivative());
  CHECK_THROWS_AS(p.coefficient.theta_derivatives(1.0), std::invalid_argument);
}

TEST_CASE("richards subdomains") {
  CHECK(in_richards_subdomain(0, Point(0.25, 0.25), 0.1));
  for (int q = 1; q < 4; ++q) CHECK_FALSE(in_richards_subdomain(q, Point(0.25, 0.25), 0.1));
  for (int q = 0; q < 4; ++q) CHECK(in_richards_subdomain(q, Point(0.5, 0.5), 0.1));
  const ProblemDefinition p = model_problem_2();
  const Matrix2 single = p.coefficient.evaluate(Point(0.25, 0.25), -1.0);
  const Matrix2 expected = p.coefficient.thetas(-1.0)[0] * oscillating_field(0, Point(0.25, 0.25), 0.1);
  CHECK((single - expected).norm() < 1e-15);
  CHECK(p.parameter_domain.lower == -2.0);
  CHECK(p.parameter_domain.upper == doctest::Approx(-0.0726));
}

TEST_CASE("brooks corey saturation") {
  const auto soils = default_soils();
  const SoilParameters& s = soils[0];
  CHECK(brooks_corey_theta(s, s.bubbling_pressure) == doctest::Approx(s.theta_max));
  CHECK(brooks_corey_theta(s, 0.5) == s.theta_max);
  CHECK(brooks_corey_theta(s, -0.2) == doctest::Approx(0.58).epsilon(1e-14));
  CHECK(brooks_corey_theta(s, -1e12) == doctest::Approx(s.theta_min).epsilon(1e-9));
  CHECK(brooks_corey_kr(s, s.theta_max) == doctest::Approx(1.0));
  CHECK(brooks_corey_kr(s, s.theta_min) == 0.0);
  CHECK_THROWS_AS(brooks_corey_kr(s, 0.99), std::invalid_argument);
  CHECK_THROWS_AS(brooks_corey_kr(s, 0.1), std::invalid_argument);
}

TEST_CASE("closed form agrees with the composition") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-3.0, 0.0);
  for (const auto& s : default_soils()) {
    for (int i = 0; i < 100; ++i) {
      const double p = std::min(u(rng), s.bubbling_pressure);
      const double closed = richards_theta_closed_form(s, p);
      CHECK(std::abs(richards_theta(s, p) - closed) <= 1e-12 * closed);
    }
    CHECK(richards_theta_closed_form(s, 0.0) == 1.0);
  }
}

TEST_CASE("theta derivative against central differences") {
  for (const auto& s : default_soils()) {
    const double p = 2.0 * s.bubbling_pressure;
    const double d = 1e-7 * std::abs(p);
    const double fd = (richards_theta(s, p + d) - richards_theta(s, p - d)) / (2.0 * d);
    CHECK(std::abs(fd - theta_q_richards_derivative(s, p)) <= 1e-6);
    CHECK(theta_q_richards_derivative(s, 0.5 * s.bubbling_pressure) == 0.0);
  }
  const ProblemDefinition p = model_problem_2();
  CHECK(p.coefficient.has_derivative());
  CHECK(p.coefficient.theta_derivatives(-1.0).size() == 4);
}

TEST_CASE("richards theta is continuous at the bubbling pressure") {
  for (const auto& s : default_soils()) {
    const double pb = s.bubbling_pressure;
    CHECK(std::abs(richards_theta(s, pb * (1.0 + 1e-10)) - richards_theta(s, pb * (1.0 - 1e-10))) < 1e-8);
  }
}

TEST_CASE("soil validation") {
  CHECK_THROWS_AS((SoilParameters{0.5, 0.4, 1.0, -0.1}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((SoilParameters{0.1, 0.9, 0.0, -0.1}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((SoilParameters{0.1, 0.9, 1.0, 0.1}.validate()), std::invalid_argument);
}

TEST_CASE("overrides") {
  const auto o = parse_problem_overrides(
      {{"epsilon", "0.05"}, {"mu_upper", "4"}, {"soil2", "0.1,0.9,0.5,-0.2"}, {"coarse-n", "8"}});
  CHECK(*o.epsilon == 0.05);
  CHECK(*o.mu_upper == 4.0);
  CHECK(o.soils[1]->lambda == 0.5);
  CHECK_FALSE(o.soils[0].has_value());
  const ProblemDefinition p1 = make_problem("mp1", o);
  CHECK(p1.epsilon == 0.05);
  CHECK(p1.parameter_domain.upper == 4.0);
  const ProblemDefinition p2 = make_problem("mp2", parse_problem_overrides({{"soil2", "0.1,0.9,0.5,-0.2"}}));
  CHECK(p2.soils[1].bubbling_pressure == -0.2);
  CHECK_THROWS_AS(parse_problem_overrides({{"epsilon", "abc"}}), std::invalid_argument);
  CHECK_THROWS_AS(parse_problem_overrides({{"soil1", "0.1,0.9"}}), std::invalid_argument);
  CHECK_THROWS_AS(make_problem("mp3"), std::invalid_argument);
  CHECK_THROWS_AS(make_problem("mp1", parse_problem_overrides({{"mu_lower", "6"}})), std::invalid_argument);
}

TEST_CASE("spectral sweeps") {
  const Mesh mesh = build_unit_square_mesh(4);
  const std::vector<double> params = {0.0};
  const auto identity = single_term([](const Point&) { return Matrix2::Identity(); });
  CHECK(coercivity_lower_bound(identity, params, mesh) == doctest::Approx(1.0));
  CHECK(continuity_upper_bound(identity, params, mesh) == doctest::Approx(1.0));

  const auto scalar = single_term([](const Point& x) { return (1.0 + x.x()) * Matrix2::Identity(); });
  double lo = 1e9;
  for (int e = 0; e < mesh.element_count(); ++e) lo = std::min(lo, 1.0 + mesh.barycenter(e).x());
  CHECK(coercivity_lower_bound(scalar, params, mesh) == doctest::Approx(lo));

  const auto negative = single_term([](const Point& x) { return (x.x() - 0.5) * Matrix2::Identity(); });
  CHECK_THROWS_AS(coercivity_lower_bound(negative, params, mesh), CoefficientNotCoerciveError);
  CHECK_THROWS_AS(coercivity_lower_bound(identity, std::vector<double>{}, mesh), std::invalid_argument);

  Matrix2 a;
  a << 2.0, 1.0, 1.0, 2.0;
  CHECK(min_eigenvalue(a) == doctest::Approx(1.0));
  CHECK(max_eigenvalue(a) == doctest::Approx(3.0));
}

TEST_CASE("mp1 coercivity over a training-size sample on the fine mesh") {
  const ProblemDefinition p = model_problem_1();
  const Mesh mesh = build_unit_square_mesh(128);
  std::vector<double> params;
  for (int i = 0; i < 100; ++i) params.push_back(5.0 * i / 99.0);
  CHECK(coercivity_lower_bound(p.coefficient, params, mesh) > 0.0);
}
