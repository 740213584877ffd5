#include "rblod/errors.hpp"

#include <sstream>

namespace rblod {

SingularMatrixError::SingularMatrixError(const std::string& what, double pivot_ratio)
    : Error(what + " (pivot ratio " + std::to_string(pivot_ratio) + ")"), pivot_ratio_(pivot_ratio) {}

namespace {
std::string describe_point(double x, double y, double mu, double eigenvalue) {
  std::ostringstream os;
  os.precision(17);
  os << "coefficient not coercive at x=(" << x << ", " << y << "), mu=" << mu
     << ": smallest eigenvalue " << eigenvalue;
  return os.str();
}
}  // namespace

CoefficientNotCoerciveError::CoefficientNotCoerciveError(double x_, double y_, double mu_,
                                                         double eigenvalue_)
    : Error(describe_point(x_, y_, mu_, eigenvalue_)), x(x_), y(y_), mu(mu_), eigenvalue(eigenvalue_) {}

NonConvergenceError::NonConvergenceError(const std::string& what, std::vector<double> trace)
    : Error(what), trace_(std::move(trace)) {}

}  // namespace rblod
