#include "rblod/coeffs.hpp"

#include "rblod/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace rblod {

double ParameterDomain::clamp(double mu) const { return std::min(std::max(mu, lower), upper); }

std::vector<double> AffineCoefficient::thetas(double mu) const {
  std::vector<double> values(theta.size());
  for (std::size_t q = 0; q < theta.size(); ++q) values[q] = theta[q](mu);
  return values;
}

std::vector<double> AffineCoefficient::theta_derivatives(double mu) const {
  if (!has_derivative()) throw std::invalid_argument("coefficient has no parameter derivative");
  std::vector<double> values(theta_derivative.size());
  for (std::size_t q = 0; q < theta_derivative.size(); ++q) values[q] = theta_derivative[q](mu);
  return values;
}

Matrix2 AffineCoefficient::evaluate(const Point& x, double mu) const {
  Matrix2 a = Matrix2::Zero();
  for (int q = 0; q < q_count(); ++q) a += theta[q](mu) * field_at(q, x);
  return a;
}

void SoilParameters::validate() const {
  if (!(theta_min >= 0.0 && theta_min < theta_max && theta_max <= 1.0)) {
    throw std::invalid_argument("soil saturations must satisfy 0 <= theta_min < theta_max <= 1");
  }
  if (!(lambda > 0.0)) throw std::invalid_argument("soil lambda must be positive");
  if (!(bubbling_pressure < 0.0)) throw std::invalid_argument("bubbling pressure must be negative");
}

Matrix2 oscillating_field(int q, const Point& x, double epsilon) {
  const double pi = std::numbers::pi;
  const double x1 = x.x();
  const double x2 = x.y();
  switch (q) {
    case 0: {
      const double c = std::cos(2.0 * pi * x1 / epsilon);
      Matrix2 a = Matrix2::Zero();
      a(0, 0) = 5.0 / (pi * pi) / (4.0 + 2.0 * c);
      a(1, 1) = (5.0 + 2.5 * c) / (4.0 * pi);
      return a;
    }
    case 1: {
      const double s = 10.0 + 9.0 * std::sin(2.0 * pi * std::sqrt(2.0 * x1) / epsilon) *
                                  std::sin(4.5 * pi * x2 * x2 / epsilon);
      return (s / 100.0) * Matrix2::Identity();
    }
    case 2: {
      const double cells = std::floor(x1 / epsilon) + std::floor(x2 / epsilon);
      const double g = std::sin(std::floor(x1 + x2) + cells) + std::cos(std::floor(x2 - x1) + cells);
      return (3.0 / 25.0 + g / 20.0) * Matrix2::Identity();
    }
    case 3: {
      double c = 0.0;
      for (int j = 0; j <= 4; ++j) {
        for (int i = 0; i <= j; ++i) {
          c += 2.0 / (j + 1) *
               std::cos(std::floor(i * x2 - x1 / (1.0 + i)) + std::floor(i * x1 / epsilon) + std::floor(x2 / epsilon));
        }
      }
      const double t = 1.0 + c / 10.0;
      double h = t;
      if (t > 0.5 && t < 1.0) {
        h = t * t * t * t;
      } else if (t > 1.0 && t < 1.5) {
        h = std::pow(t, 1.5);
      }
      return h * Matrix2::Identity();
    }
    default:
      throw std::invalid_argument("oscillating field index out of range");
  }
}

std::array<SoilParameters, 4> default_soils() {
  return {SoilParameters{0.21, 0.95, 1.0, -0.1}, SoilParameters{0.0458, 1.0, 0.694, -0.0726},
          SoilParameters{0.091, 1.0, 0.378, -0.147}, SoilParameters{0.08, 1.0, 0.553, -0.087}};
}

ProblemDefinition model_problem_1(double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  ProblemDefinition problem;
  problem.id = "mp1";
  problem.epsilon = epsilon;
  problem.parameter_domain = {0.0, 5.0};
  problem.source = [](const Point&, double) { return 1.0; };
  auto& coeff = problem.coefficient;
  coeff.theta = {
      [](double mu) { return 2.0 + std::sin(4.0 * mu); },
      [](double mu) { return 2.0 + mu * mu - std::cos(std::sqrt(std::abs(mu))); },
      [](double mu) { return 2.0 + std::cos(std::sqrt(std::abs(mu))); },
      [](double mu) {
        const double r = std::sqrt(std::abs(mu));
        return 1.0 + r + 0.1 * r * r * r;
      },
  };
  coeff.field_at = [epsilon](int q, const Point& x) { return oscillating_field(q, x, epsilon); };
  return problem;
}

bool in_richards_subdomain(int q, const Point& x, double epsilon) {
  const double lo = 0.5 - epsilon;
  const double hi = 0.5 + epsilon;
  const bool left = x.x() >= 0.0 && x.x() <= hi;
  const bool right = x.x() >= lo && x.x() <= 1.0;
  const bool bottom = x.y() >= 0.0 && x.y() <= hi;
  const bool top = x.y() >= lo && x.y() <= 1.0;
  switch (q) {
    case 0: return left && bottom;
    case 1: return right && bottom;
    case 2: return left && top;
    case 3: return right && top;
    default: throw std::invalid_argument("subdomain index out of range");
  }
}

ProblemDefinition model_problem_2(double epsilon, const std::array<SoilParameters, 4>& soils) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  for (const auto& s : soils) s.validate();
  ProblemDefinition problem;
  problem.id = "mp2";
  problem.epsilon = epsilon;
  problem.nonlinear = true;
  problem.soils.assign(soils.begin(), soils.end());
  double upper = soils[0].bubbling_pressure;
  for (const auto& s : soils) upper = std::max(upper, s.bubbling_pressure);
  problem.parameter_domain = {-2.0, upper};
  problem.source = [](const Point&, double) { return 1.0; };
  auto& coeff = problem.coefficient;
  for (const auto& soil : soils) {
    coeff.theta.push_back([soil](double p) { return richards_theta(soil, p); });
    coeff.theta_derivative.push_back([soil](double p) { return theta_q_richards_derivative(soil, p); });
  }
  coeff.field_at = [epsilon](int q, const Point& x) -> Matrix2 {
    if (!in_richards_subdomain(q, x, epsilon)) return Matrix2::Zero();
    return oscillating_field(q, x, epsilon);
  };
  return problem;
}

namespace {

double parse_double(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || text.find_first_not_of(" \t", used) != std::string::npos) {
    throw std::invalid_argument("cannot parse value of '" + key + "': " + text);
  }
  return value;
}

SoilParameters parse_soil(const std::string& key, const std::string& text) {
  std::vector<double> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(parse_double(key, item));
  if (parts.size() != 4) throw std::invalid_argument(key + " needs theta_min,theta_max,lambda,p_b");
  SoilParameters soil{parts[0], parts[1], parts[2], parts[3]};
  soil.validate();
  return soil;
}

}  // namespace

ProblemOverrides parse_problem_overrides(const std::map<std::string, std::string>& values) {
  ProblemOverrides overrides;
  for (const auto& [key, value] : values) {
    if (key == "epsilon") {
      overrides.epsilon = parse_double(key, value);
    } else if (key == "mu_lower") {
      overrides.mu_lower = parse_double(key, value);
    } else if (key == "mu_upper") {
      overrides.mu_upper = parse_double(key, value);
    } else if (key.size() == 5 && key.rfind("soil", 0) == 0 && key[4] >= '1' && key[4] <= '4') {
      overrides.soils[key[4] - '1'] = parse_soil(key, value);
    }
  }
  return overrides;
}

ProblemDefinition make_problem(const std::string& id, const ProblemOverrides& overrides) {
  const double epsilon = overrides.epsilon.value_or(0.1);
  ProblemDefinition problem;
  if (id == "mp1") {
    problem = model_problem_1(epsilon);
  } else if (id == "mp2") {
    auto soils = default_soils();
    for (int q = 0; q < 4; ++q) {
      if (overrides.soils[q]) soils[q] = *overrides.soils[q];
    }
    problem = model_problem_2(epsilon, soils);
  } else {
    throw std::invalid_argument("unknown problem id '" + id + "' (expected mp1 or mp2)");
  }
  if (overrides.mu_lower) problem.parameter_domain.lower = *overrides.mu_lower;
  if (overrides.mu_upper) problem.parameter_domain.upper = *overrides.mu_upper;
  if (!(problem.parameter_domain.lower < problem.parameter_domain.upper)) {
    throw std::invalid_argument("parameter domain needs lower < upper");
  }
  return problem;
}

double brooks_corey_theta(const SoilParameters& soil, double p) {
  if (p >= soil.bubbling_pressure) return soil.theta_max;
  return soil.theta_min + (soil.theta_max - soil.theta_min) * std::pow(p / soil.bubbling_pressure, -soil.lambda);
}

double brooks_corey_kr(const SoilParameters& soil, double theta) {
  const double span = soil.theta_max - soil.theta_min;
  // Rounding in theta_min + span * s may overshoot the end points by an ulp.
  const double slack = 1e-12 * std::max(1.0, std::abs(soil.theta_max));
  if (!(theta >= soil.theta_min - slack && theta <= soil.theta_max + slack)) {
    throw std::invalid_argument("saturation outside [theta_min, theta_max]");
  }
  const double s = std::clamp((theta - soil.theta_min) / span, 0.0, 1.0);
  return std::pow(s, 3.0 + 2.0 / soil.lambda);
}

double richards_theta(const SoilParameters& soil, double p) { return brooks_corey_kr(soil, brooks_corey_theta(soil, p)); }

double richards_theta_closed_form(const SoilParameters& soil, double p) {
  if (p >= soil.bubbling_pressure) return 1.0;
  return std::pow(p / soil.bubbling_pressure, -(3.0 * soil.lambda + 2.0));
}

double theta_q_richards_derivative(const SoilParameters& soil, double p) {
  if (p > soil.bubbling_pressure) return 0.0;
  const double s = 3.0 * soil.lambda + 2.0;
  return -s / soil.bubbling_pressure * std::pow(p / soil.bubbling_pressure, -s - 1.0);
}

double min_eigenvalue(const Matrix2& a) {
  const double mean = 0.5 * (a(0, 0) + a(1, 1));
  const double diff = 0.5 * (a(0, 0) - a(1, 1));
  const double off = 0.5 * (a(0, 1) + a(1, 0));
  return mean - std::hypot(diff, off);
}

double max_eigenvalue(const Matrix2& a) {
  const double mean = 0.5 * (a(0, 0) + a(1, 1));
  const double diff = 0.5 * (a(0, 0) - a(1, 1));
  const double off = 0.5 * (a(0, 1) + a(1, 0));
  return mean + std::hypot(diff, off);
}

namespace {

template <class Reduce>
double spectral_sweep(const AffineCoefficient& coeff, std::span<const double> params, const Mesh& mesh, bool lower,
                      Reduce&& reduce) {
  if (params.empty()) throw std::invalid_argument("parameter sample must be nonempty");
  const int nq = coeff.q_count();
  std::vector<std::vector<Matrix2>> fields(nq, std::vector<Matrix2>(mesh.element_count()));
  for (int q = 0; q < nq; ++q) {
    for (int e = 0; e < mesh.element_count(); ++e) fields[q][e] = coeff.field_at(q, mesh.barycenter(e));
  }
  double result = lower ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
  for (double mu : params) {
    const auto th = coeff.thetas(mu);
    for (int e = 0; e < mesh.element_count(); ++e) {
      Matrix2 a = Matrix2::Zero();
      for (int q = 0; q < nq; ++q) a += th[q] * fields[q][e];
      result = reduce(result, a, e, mu);
    }
  }
  return result;
}

}  // namespace

double coercivity_lower_bound(const AffineCoefficient& coeff, std::span<const double> params, const Mesh& mesh) {
  return spectral_sweep(coeff, params, mesh, true, [&](double acc, const Matrix2& a, int e, double mu) {
    const double lambda = min_eigenvalue(a);
    if (!(lambda > 0.0)) {
      const Point x = mesh.barycenter(e);
      throw CoefficientNotCoerciveError(x.x(), x.y(), mu, lambda);
    }
    return std::min(acc, lambda);
  });
}

double continuity_upper_bound(const AffineCoefficient& coeff, std::span<const double> params, const Mesh& mesh) {
  return spectral_sweep(coeff, params, mesh, false,
                        [](double acc, const Matrix2& a, int, double) { return std::max(acc, max_eigenvalue(a)); });
}

}  // namespace rblod
