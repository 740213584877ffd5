#pragma once

#include "rblod/lod.hpp"
#include "rblod/rboffline.hpp"

#include <span>
#include <string>
#include <vector>

namespace rblod {

// Online basis functions Phi_z + xi^z q_z for every interior coarse node.
struct OnlineBasis {
  std::vector<double> parameters;     // per interior node, after clamping
  std::vector<Vector> coefficients;   // q_z, length J_z
  int clamped = 0;                    // nodes whose requested parameter left D
  double local_seconds = 0.0;         // total time of the local solves
};

// Solves D(mu) q = -F(mu) for one node.
Vector online_local_solve(const LocalRBSpace& space, std::span<const double> theta);

OnlineBasis online_basis(const OfflineDB& db, const ProblemDefinition& problem, double mu);
OnlineBasis online_basis(const OfflineDB& db, const ProblemDefinition& problem, std::span<const double> node_parameters);

// Fine representation of one online basis function.
Vector online_basis_function(const Discretization& disc, const LocalRBSpace& space, const Vector& q);
// Fine x N matrix whose columns are the online basis functions.
SparseMatrix basis_matrix(const Discretization& disc, const OfflineDB& db, const OnlineBasis& basis);

// Global matrix by summation of the stored pair entries. Column m of the
// matrix uses column_theta[m]; with a single parameter the result is symmetric.
SparseMatrix assemble_global(const OfflineDB& db, const OnlineBasis& basis,
                             const std::vector<std::vector<double>>& column_theta);
SparseMatrix assemble_global(const OfflineDB& db, const OnlineBasis& basis, std::span<const double> theta);

Vector assemble_global_load(const Discretization& disc, const SparseMatrix& basis_fine, double mu);

struct OnlineSolution {
  Vector coarse;       // coefficients on the online basis, interior node order
  Vector fine;
  Vector coarse_part;  // same coefficients on the coarse hats
  OnlineBasis basis;
  double global_seconds = 0.0;
};

OnlineSolution online_solve(const Discretization& disc, const OfflineDB& db, double mu);

enum class NewtonVariant { Full, Precomputed };

std::string to_string(NewtonVariant variant);
NewtonVariant parse_newton_variant(const std::string& text);

struct NewtonStep {
  double update_norm = 0.0;  // |delta| / |p_{n+1}|
  int clamped = 0;
};

struct NewtonResult {
  OnlineSolution solution;
  std::vector<NewtonStep> trace;
  int local_solves = 0;
  double local_seconds = 0.0;  // summed over iterations
};

NewtonResult newton_richards(const Discretization& disc, const OfflineDB& db, double p0, double newton_tol,
                             int max_iter, NewtonVariant variant);

struct FineNewtonResult {
  Vector solution;
  std::vector<double> trace;
};

FineNewtonResult fine_newton_reference(const Discretization& disc, double p0, double newton_tol, int max_iter = 50);

// A(x, p) and dA/dp(x, p) per fine element, with p taken at the element barycenter.
ElementField richards_field(const Discretization& disc, const Vector& p, bool derivative);

}  // namespace rblod
