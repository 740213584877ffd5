#pragma once

#include "rblod/geometry.hpp"

#include <Eigen/Core>

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rblod {

using Matrix2 = Eigen::Matrix2d;
using ScalarFunction = std::function<double(double)>;

struct ParameterDomain {
  double lower = 0.0;
  double upper = 1.0;

  bool contains(double mu) const { return mu >= lower && mu <= upper; }
  double clamp(double mu) const;
  double midpoint() const { return 0.5 * (lower + upper); }
};

// a(x; mu) = sum_q theta_q(mu) a_q(x).
struct AffineCoefficient {
  std::vector<ScalarFunction> theta;
  std::vector<ScalarFunction> theta_derivative;  // empty when unavailable
  std::function<Matrix2(int, const Point&)> field_at;
  double alpha = 0.0;  // nominal spectral bounds, 0 when not known a priori
  double beta = 0.0;

  int q_count() const { return static_cast<int>(theta.size()); }
  bool has_derivative() const { return theta_derivative.size() == theta.size() && !theta.empty(); }
  std::vector<double> thetas(double mu) const;
  std::vector<double> theta_derivatives(double mu) const;
  Matrix2 evaluate(const Point& x, double mu) const;
};

struct SoilParameters {
  double theta_min = 0.0;
  double theta_max = 1.0;
  double lambda = 1.0;
  double bubbling_pressure = -0.1;

  void validate() const;
};

struct ProblemDefinition {
  std::string id;
  AffineCoefficient coefficient;
  std::function<double(const Point&, double)> source;
  ParameterDomain parameter_domain;
  bool nonlinear = false;
  double epsilon = 0.1;
  Point origin = Point(0.0, 0.0);
  double side = 1.0;
  std::vector<SoilParameters> soils;

  Mesh make_mesh(int n) const { return build_unit_square_mesh(n, origin, side); }
};

struct ProblemOverrides {
  std::optional<double> epsilon;
  std::optional<double> mu_lower;
  std::optional<double> mu_upper;
  std::array<std::optional<SoilParameters>, 4> soils;
};

// Keys: epsilon, mu_lower, mu_upper, soil1..soil4 = "theta_min,theta_max,lambda,p_b".
// Unknown keys are ignored so that one file can also carry CLI settings.
ProblemOverrides parse_problem_overrides(const std::map<std::string, std::string>& values);

// The four oscillating fields of the first model problem.
Matrix2 oscillating_field(int q, const Point& x, double epsilon);

std::array<SoilParameters, 4> default_soils();

ProblemDefinition model_problem_1(double epsilon = 0.1);
ProblemDefinition model_problem_2(double epsilon = 0.1, const std::array<SoilParameters, 4>& soils = default_soils());
ProblemDefinition make_problem(const std::string& id, const ProblemOverrides& overrides = {});

// Subdomain of the second model problem containing x (closed sets; q in 0..3).
bool in_richards_subdomain(int q, const Point& x, double epsilon);

double brooks_corey_theta(const SoilParameters& soil, double p);
double brooks_corey_kr(const SoilParameters& soil, double theta);
// kr(theta(p)) by composition.
double richards_theta(const SoilParameters& soil, double p);
// (p/p_b)^-(3 lambda + 2) for p <= p_b, else 1.
double richards_theta_closed_form(const SoilParameters& soil, double p);
double theta_q_richards_derivative(const SoilParameters& soil, double p);

double min_eigenvalue(const Matrix2& a);
double max_eigenvalue(const Matrix2& a);

// Smallest eigenvalue of a(x; mu) over element barycenters and the sample.
double coercivity_lower_bound(const AffineCoefficient& coeff, std::span<const double> params, const Mesh& mesh);
// Largest eigenvalue over the same sweep.
double continuity_upper_bound(const AffineCoefficient& coeff, std::span<const double> params, const Mesh& mesh);

}  // namespace rblod
