#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace rblod {

// Base class for all library failures that are not plain argument errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularMatrixError : public Error {
 public:
  SingularMatrixError(const std::string& what, double pivot_ratio);
  double pivot_ratio() const { return pivot_ratio_; }

 private:
  double pivot_ratio_;
};

class DegeneratePatchError : public Error {
 public:
  using Error::Error;
};

class CoefficientNotCoerciveError : public Error {
 public:
  CoefficientNotCoerciveError(double x, double y, double mu, double eigenvalue);
  double x, y, mu, eigenvalue;
};

class IllConditionedBasisError : public Error {
 public:
  using Error::Error;
};

class InconsistentDatabaseError : public Error {
 public:
  using Error::Error;
};

class IncompatibleDatabaseError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class DivisionError : public Error {
 public:
  using Error::Error;
};

class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, std::vector<double> trace);
  const std::vector<double>& trace() const { return trace_; }

 private:
  std::vector<double> trace_;
};

}  // namespace rblod
