#include "rblod/rbonline.hpp"

#include "rblod/errors.hpp"

#include <Eigen/Cholesky>

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace rblod {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Matrix with entries (|T|/3) (g_T . grad lambda_i) for i, j in T, i.e. the
// fine form int (g . grad v) delta for elementwise constant g.
SparseMatrix transport_matrix(const Mesh& mesh, const std::vector<Eigen::Vector2d>& g) {
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(9 * mesh.elements.size());
  for (int e = 0; e < mesh.element_count(); ++e) {
    const auto grads = hat_gradients(mesh, e);
    const auto& t = mesh.elements[e];
    const double w = mesh.area(e) / 3.0;
    for (int i = 0; i < 3; ++i) {
      const double gi = w * g[e].dot(grads[i]);
      if (gi == 0.0) continue;
      for (int j = 0; j < 3; ++j) triplets.emplace_back(t[i], t[j], gi);
    }
  }
  SparseMatrix m(mesh.node_count(), mesh.node_count());
  m.setFromTriplets(triplets.begin(), triplets.end());
  return m;
}

// Elementwise field(T) grad p on T.
std::vector<Eigen::Vector2d> flux(const Mesh& mesh, std::span<const Matrix2> field, const Vector& p) {
  std::vector<Eigen::Vector2d> g(mesh.element_count());
  for (int e = 0; e < mesh.element_count(); ++e) {
    const auto grads = hat_gradients(mesh, e);
    const auto& t = mesh.elements[e];
    Eigen::Vector2d grad = p[t[0]] * grads[0] + p[t[1]] * grads[1] + p[t[2]] * grads[2];
    g[e] = field[e] * grad;
  }
  return g;
}

Vector source_load(const Discretization& disc, double mu) {
  return assemble_load(disc.hier.fine, [&](const Point& x) { return disc.problem.source(x, mu); });
}

void require_nonlinear(const Discretization& disc) {
  if (!disc.problem.nonlinear) throw std::invalid_argument("Newton driver needs the nonlinear problem");
  if (!disc.problem.coefficient.has_derivative()) {
    throw std::invalid_argument("coefficient functions have no derivative");
  }
}

}  // namespace

Vector online_local_solve(const LocalRBSpace& space, std::span<const double> theta) {
  const int j = space.dimension();
  if (j == 0) return Vector();
  if (space.D.size() != theta.size() || space.F.size() != theta.size()) {
    throw InconsistentDatabaseError("node " + std::to_string(space.node) + " lacks precomputed local matrices");
  }
  DenseMatrix d = DenseMatrix::Zero(j, j);
  Vector f = Vector::Zero(j);
  for (std::size_t q = 0; q < theta.size(); ++q) {
    d += theta[q] * space.D[q];
    f += theta[q] * space.F[q];
  }
  Eigen::LLT<DenseMatrix> llt(d);
  if (llt.info() != Eigen::Success) {
    throw IllConditionedBasisError("online matrix of node " + std::to_string(space.node) + " is not positive definite");
  }
  return llt.solve(Vector(-f));
}

OnlineBasis online_basis(const OfflineDB& db, const ProblemDefinition& problem, double mu) {
  const std::vector<double> params(db.spaces.size(), mu);
  return online_basis(db, problem, params);
}

OnlineBasis online_basis(const OfflineDB& db, const ProblemDefinition& problem,
                         std::span<const double> node_parameters) {
  if (node_parameters.size() != db.spaces.size()) {
    throw std::invalid_argument("one parameter per interior coarse node is required");
  }
  const auto start = Clock::now();
  OnlineBasis basis;
  const auto& domain = problem.parameter_domain;
  for (std::size_t i = 0; i < db.spaces.size(); ++i) {
    double mu = node_parameters[i];
    if (!domain.contains(mu)) {
      mu = domain.clamp(mu);
      ++basis.clamped;
    }
    basis.parameters.push_back(mu);
    basis.coefficients.push_back(online_local_solve(db.spaces[i], problem.coefficient.thetas(mu)));
  }
  basis.local_seconds = seconds_since(start);
  return basis;
}

Vector online_basis_function(const Discretization& disc, const LocalRBSpace& space, const Vector& q) {
  Vector v = disc.fine_hat(space.node);
  if (q.size() == 0) return v;
  const Vector local = space.basis * q;
  for (std::size_t i = 0; i < space.support.size(); ++i) v[space.support[i]] += local[i];
  return v;
}

SparseMatrix basis_matrix(const Discretization& disc, const OfflineDB& db, const OnlineBasis& basis) {
  std::vector<Eigen::Triplet<double>> triplets;
  for (std::size_t n = 0; n < db.spaces.size(); ++n) {
    const auto& space = db.spaces[n];
    const int col = static_cast<int>(n);
    for (SparseMatrix::InnerIterator it(disc.embedding, space.node); it; ++it) {
      triplets.emplace_back(static_cast<int>(it.row()), col, it.value());
    }
    if (basis.coefficients[n].size() == 0) continue;
    const Vector local = space.basis * basis.coefficients[n];
    for (std::size_t i = 0; i < space.support.size(); ++i) {
      if (local[i] != 0.0) triplets.emplace_back(space.support[i], col, local[i]);
    }
  }
  SparseMatrix b(disc.hier.fine.node_count(), static_cast<int>(db.spaces.size()));
  b.setFromTriplets(triplets.begin(), triplets.end());
  return b;
}

SparseMatrix assemble_global(const OfflineDB& db, const OnlineBasis& basis,
                             const std::vector<std::vector<double>>& column_theta) {
  const int count = static_cast<int>(db.spaces.size());
  if (static_cast<int>(column_theta.size()) != count || static_cast<int>(basis.coefficients.size()) != count) {
    throw std::invalid_argument("basis and coefficient data must cover every node");
  }
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(2 * db.pairs.size());
  for (const auto& pair : db.pairs) {
    const Vector& cn = basis.coefficients[pair.n];
    const Vector& cm = basis.coefficients[pair.m];
    double to_m = 0.0;  // entry (n, m), theta of column m
    double to_n = 0.0;  // entry (m, n), theta of column n
    for (std::size_t q = 0; q < pair.s.size(); ++q) {
      double value = pair.s[q];
      if (cm.size()) value += cm.dot(pair.r_nm[q]);
      if (cn.size()) value += cn.dot(pair.r_mn[q]);
      if (cn.size() && cm.size()) value += cn.dot(pair.M[q] * cm);
      to_m += column_theta[pair.m][q] * value;
      to_n += column_theta[pair.n][q] * value;
    }
    triplets.emplace_back(pair.n, pair.m, to_m);
    if (pair.n != pair.m) triplets.emplace_back(pair.m, pair.n, to_n);
  }
  SparseMatrix s(count, count);
  s.setFromTriplets(triplets.begin(), triplets.end());
  return s;
}

SparseMatrix assemble_global(const OfflineDB& db, const OnlineBasis& basis, std::span<const double> theta) {
  const std::vector<std::vector<double>> columns(db.spaces.size(), std::vector<double>(theta.begin(), theta.end()));
  return assemble_global(db, basis, columns);
}

Vector assemble_global_load(const Discretization& disc, const SparseMatrix& basis_fine, double mu) {
  return basis_fine.transpose() * source_load(disc, mu);
}

OnlineSolution online_solve(const Discretization& disc, const OfflineDB& db, double mu) {
  if (disc.problem.nonlinear) throw std::invalid_argument("online solve needs a linear problem");
  OnlineSolution solution;
  solution.basis = online_basis(db, disc.problem, mu);
  const double clamped_mu = solution.basis.parameters.empty() ? mu : solution.basis.parameters.front();
  const auto start = Clock::now();
  const SparseMatrix s = assemble_global(db, solution.basis, disc.problem.coefficient.thetas(clamped_mu));
  const SparseMatrix b = basis_matrix(disc, db, solution.basis);
  solution.coarse = solve_spd(s, assemble_global_load(disc, b, clamped_mu));
  solution.global_seconds = seconds_since(start);
  solution.fine = b * solution.coarse;
  solution.coarse_part = extract_block(disc.embedding, std::vector<int>(), disc.coarse_interior()) * solution.coarse;
  return solution;
}

std::string to_string(NewtonVariant variant) {
  return variant == NewtonVariant::Full ? "full" : "precomputed";
}

NewtonVariant parse_newton_variant(const std::string& text) {
  if (text == "full") return NewtonVariant::Full;
  if (text == "precomputed") return NewtonVariant::Precomputed;
  throw std::invalid_argument("unknown Newton variant '" + text + "' (full, precomputed)");
}

ElementField richards_field(const Discretization& disc, const Vector& p, bool derivative) {
  const Mesh& fine = disc.hier.fine;
  const auto& coeff = disc.problem.coefficient;
  ElementField field(fine.element_count(), Matrix2::Zero());
  for (int e = 0; e < fine.element_count(); ++e) {
    const auto& t = fine.elements[e];
    const double value = (p[t[0]] + p[t[1]] + p[t[2]]) / 3.0;
    for (int q = 0; q < disc.q_count(); ++q) {
      const double factor = derivative ? coeff.theta_derivative[q](value) : coeff.theta[q](value);
      if (factor != 0.0) field[e] += factor * disc.terms[q][e];
    }
  }
  return field;
}

NewtonResult newton_richards(const Discretization& disc, const OfflineDB& db, double p0, double newton_tol,
                             int max_iter, NewtonVariant variant) {
  require_nonlinear(disc);
  if (!(newton_tol > 0.0) || max_iter < 1) throw std::invalid_argument("invalid Newton controls");
  const Mesh& fine = disc.hier.fine;
  const auto& coeff = disc.problem.coefficient;
  const int count = static_cast<int>(db.spaces.size());
  const Vector load = source_load(disc, 0.0);
  const SparseMatrix hats = extract_block(disc.embedding, std::vector<int>(), disc.coarse_interior());

  NewtonResult result;
  Vector p = Vector::Constant(count, p0);
  for (int iter = 0; iter < max_iter; ++iter) {
    const OnlineBasis basis = online_basis(db, disc.problem, std::span<const double>(p.data(), count));
    result.local_seconds += basis.local_seconds;
    result.local_solves += count;
    const SparseMatrix phi = basis_matrix(disc, db, basis);
    const SparseMatrix phi_t = phi.transpose();
    const Vector pf = phi * p;
    const ElementField a_field = richards_field(disc, pf, false);
    const SparseMatrix a = assemble_stiffness(fine, a_field);
    const Vector rhs = phi_t * (load - a * pf);

    SparseMatrix k;
    if (variant == NewtonVariant::Full) {
      const SparseMatrix b = transport_matrix(fine, flux(fine, richards_field(disc, pf, true), pf));
      k = phi_t * (a + b) * phi;
    } else {
      // Theta frozen at the node parameter of the column; beyond D the
      // clamped coefficient is constant, so its derivative vanishes.
      std::vector<std::vector<double>> theta(count), dtheta(count);
      for (int n = 0; n < count; ++n) {
        theta[n] = coeff.thetas(basis.parameters[n]);
        dtheta[n] = basis.parameters[n] == p[n] ? coeff.theta_derivatives(p[n])
                                                : std::vector<double>(disc.q_count(), 0.0);
      }
      k = assemble_global(db, basis, theta);
      for (int q = 0; q < disc.q_count(); ++q) {
        const SparseMatrix bq = transport_matrix(fine, flux(fine, disc.terms[q], pf));
        SparseMatrix kq = phi_t * bq * phi;
        for (int col = 0; col < kq.outerSize(); ++col) {
          for (SparseMatrix::InnerIterator it(kq, col); it; ++it) it.valueRef() *= dtheta[col][q];
        }
        k += kq;
      }
    }
    const Vector delta = solve_general(k, rhs);
    p += delta;
    const double pn = p.norm();
    NewtonStep step;
    step.update_norm = pn > 0.0 ? delta.norm() / pn : delta.norm();
    step.clamped = basis.clamped;
    result.trace.push_back(step);
    if (!std::isfinite(step.update_norm)) break;
    if (step.update_norm <= newton_tol) {
      auto& sol = result.solution;
      sol.basis = online_basis(db, disc.problem, std::span<const double>(p.data(), count));
      result.local_seconds += sol.basis.local_seconds;
      result.local_solves += count;
      sol.coarse = p;
      sol.fine = basis_matrix(disc, db, sol.basis) * p;
      sol.coarse_part = hats * p;
      return result;
    }
  }
  std::vector<double> trace;
  for (const auto& s : result.trace) trace.push_back(s.update_norm);
  throw NonConvergenceError("Newton iteration did not reach the tolerance in " + std::to_string(max_iter) + " steps",
                            trace);
}

FineNewtonResult fine_newton_reference(const Discretization& disc, double p0, double newton_tol, int max_iter) {
  require_nonlinear(disc);
  const Mesh& fine = disc.hier.fine;
  const auto& dofs = fine.interior_nodes;
  const Vector load = source_load(disc, 0.0);
  FineNewtonResult result;
  Vector p = Vector::Zero(fine.node_count());
  for (int v : dofs) p[v] = p0;
  Vector pi(dofs.size());
  for (std::size_t i = 0; i < dofs.size(); ++i) pi[i] = p[dofs[i]];

  for (int iter = 0; iter < max_iter; ++iter) {
    const SparseMatrix a = assemble_stiffness(fine, richards_field(disc, p, false));
    const SparseMatrix b = transport_matrix(fine, flux(fine, richards_field(disc, p, true), p));
    const Vector r = load - a * p;
    Vector ri(dofs.size());
    for (std::size_t i = 0; i < dofs.size(); ++i) ri[i] = r[dofs[i]];
    const SparseMatrix k = extract_block(SparseMatrix(a + b), dofs, dofs);
    const Vector delta = solve_general(k, ri);
    pi += delta;
    for (std::size_t i = 0; i < dofs.size(); ++i) p[dofs[i]] = pi[i];
    const double pn = pi.norm();
    const double update = pn > 0.0 ? delta.norm() / pn : delta.norm();
    result.trace.push_back(update);
    if (!std::isfinite(update)) break;
    if (update <= newton_tol) {
      result.solution = p;
      return result;
    }
  }
  throw NonConvergenceError("fine Newton iteration did not reach the tolerance", result.trace);
}

}  // namespace rblod
