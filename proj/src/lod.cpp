#include "rblod/lod.hpp"

#include "rblod/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace rblod {

ElementField Discretization::field(std::span<const double> theta) const {
  ElementField result(hier.fine.element_count(), Matrix2::Zero());
  for (int q = 0; q < q_count(); ++q) {
    for (std::size_t e = 0; e < result.size(); ++e) result[e] += theta[q] * terms[q][e];
  }
  return result;
}

ElementField Discretization::field_at(double mu) const { return field(problem.coefficient.thetas(mu)); }

SparseMatrix Discretization::stiffness_at(std::span<const double> theta) const {
  SparseMatrix a = theta[0] * stiffness[0];
  for (int q = 1; q < q_count(); ++q) a += theta[q] * stiffness[q];
  return a;
}

Vector Discretization::fine_hat(int z) const {
  Vector v = Vector::Zero(hier.fine.node_count());
  for (SparseMatrix::InnerIterator it(embedding, z); it; ++it) v[it.row()] = it.value();
  return v;
}

Discretization make_discretization(const ProblemDefinition& problem, int n_coarse, int levels) {
  return make_discretization(problem, refine_uniform(problem.make_mesh(n_coarse), levels));
}

Discretization make_discretization(const ProblemDefinition& problem, MeshHierarchy hier) {
  Discretization disc;
  disc.problem = problem;
  disc.hier = std::move(hier);
  const Mesh& fine = disc.hier.fine;
  for (int q = 0; q < problem.coefficient.q_count(); ++q) {
    disc.terms.push_back(sample_term(problem.coefficient, q, fine));
    disc.stiffness.push_back(assemble_stiffness(fine, disc.terms.back()));
  }
  disc.laplacian = assemble_stiffness(fine, constant_field(fine, Matrix2::Identity()));
  disc.mass = assemble_mass(fine);
  disc.embedding = coarse_embedding(disc.hier);
  disc.constraint = quasi_interpolation_matrix(disc.hier);
  disc.coarse_interior_index.assign(disc.hier.coarse.node_count(), -1);
  const auto& interior = disc.hier.coarse.interior_nodes;
  for (std::size_t i = 0; i < interior.size(); ++i) disc.coarse_interior_index[interior[i]] = static_cast<int>(i);
  return disc;
}

SparseMatrix PatchSpace::matrix(std::span<const double> theta) const {
  SparseMatrix a = theta[0] * stiffness[0];
  for (std::size_t q = 1; q < stiffness.size(); ++q) a += theta[q] * stiffness[q];
  return a;
}

Vector PatchSpace::to_fine(const Vector& local, int fine_count) const {
  Vector v = Vector::Zero(fine_count);
  for (std::size_t i = 0; i < dofs.size(); ++i) v[dofs[i]] = local[i];
  return v;
}

PatchSpace make_patch_space(const Discretization& disc, Patch patch) {
  PatchSpace space;
  space.patch = std::move(patch);
  space.dofs = space.patch.fine_interior_nodes;
  if (space.dofs.empty()) {
    throw DegeneratePatchError("patch around coarse element " + std::to_string(space.patch.center_element) +
                               " has no interior fine nodes");
  }
  std::vector<std::uint8_t> touched(disc.constraint.rows(), 0);
  for (int v : space.dofs) {
    for (SparseMatrix::InnerIterator it(disc.constraint, v); it; ++it) touched[it.row()] = 1;
  }
  for (int r = 0; r < static_cast<int>(touched.size()); ++r) {
    if (touched[r]) space.constraint_rows.push_back(r);
  }
  if (space.constraint_rows.size() >= space.dofs.size()) {
    throw DegeneratePatchError("patch has no more fine unknowns than constraints");
  }
  space.constraint = extract_block(disc.constraint, space.constraint_rows, space.dofs);
  for (const auto& a : disc.stiffness) space.stiffness.push_back(extract_block(a, space.dofs, space.dofs));
  space.laplacian = extract_block(disc.laplacian, space.dofs, space.dofs);
  return space;
}

ConstrainedSolver::ConstrainedSolver(const SparseMatrix& matrix, const SparseMatrix& constraint)
    : factor_(matrix), constraint_(constraint) {
  if (constraint_.rows() == 0) return;
  const DenseMatrix ct = DenseMatrix(constraint_.transpose());
  y_ = factor_.solve(ct);
  DenseMatrix schur = constraint_ * y_;
  schur = 0.5 * (schur + schur.transpose()).eval();
  schur_.compute(schur);
  if (schur_.info() != Eigen::Success) {
    throw SingularMatrixError("Schur complement of the constraint block is not positive definite", 0.0);
  }
}

Vector ConstrainedSolver::solve(const Vector& rhs) const {
  Vector w = factor_.solve(rhs);
  if (constraint_.rows() == 0) return w;
  const Vector lambda = schur_.solve(constraint_ * w);
  w.noalias() -= y_ * lambda;
  return w;
}

DenseMatrix ConstrainedSolver::solve(const DenseMatrix& rhs) const {
  DenseMatrix w = factor_.solve(rhs);
  if (constraint_.rows() == 0) return w;
  const DenseMatrix lambda = schur_.solve(constraint_ * w);
  w.noalias() -= y_ * lambda;
  return w;
}

Vector solve_constrained(const PatchSpace& space, const SparseMatrix& matrix, const Vector& rhs) {
  if (rhs.size() != space.size()) throw std::invalid_argument("right-hand side does not match the patch");
  return ConstrainedSolver(matrix, space.constraint).solve(rhs);
}

Vector element_coupling(const Discretization& disc, const PatchSpace& space, int element, int z, int q) {
  const Mesh& coarse = disc.hier.coarse;
  const Mesh& fine = disc.hier.fine;
  const auto& t = coarse.elements[element];
  const auto it = std::find(t.begin(), t.end(), z);
  if (it == t.end()) throw std::invalid_argument("node is not a vertex of the element");
  const Eigen::Vector2d g = hat_gradients(coarse, element)[it - t.begin()];
  const Point center = coarse.barycenter(element);

  Vector result = Vector::Zero(space.size());
  for (int e : disc.hier.coarse_element_children[element]) {
    const auto& tf = fine.elements[e];
    Eigen::Vector3d phi;
    for (int i = 0; i < 3; ++i) phi[i] = 1.0 / 3.0 + g.dot(fine.nodes[tf[i]] - center);
    const Eigen::Vector3d local = element_stiffness(fine, e, disc.terms[q][e]) * phi;
    for (int i = 0; i < 3; ++i) {
      const int row = sorted_index(space.dofs, tf[i]);
      if (row >= 0) result[row] += local[i];
    }
  }
  return result;
}

Vector CorrectorPiece::to_fine(int fine_count) const {
  Vector v = Vector::Zero(fine_count);
  for (std::size_t i = 0; i < dofs.size(); ++i) v[dofs[i]] = values[i];
  return v;
}

CorrectorPiece solve_corrector(const Discretization& disc, int z, int element, int k, double mu) {
  const PatchSpace space = make_patch_space(disc, element_patch(disc.hier, element, k));
  const auto theta = disc.problem.coefficient.thetas(mu);
  Vector rhs = Vector::Zero(space.size());
  for (int q = 0; q < disc.q_count(); ++q) rhs -= theta[q] * element_coupling(disc, space, element, z, q);
  CorrectorPiece piece;
  piece.node = z;
  piece.element = element;
  piece.k = k;
  piece.dofs = space.dofs;
  piece.values = solve_constrained(space, space.matrix(theta), rhs);
  return piece;
}

MultiscaleBasisFunction assemble_ms_basis(const Discretization& disc, double mu, int z, int k) {
  MultiscaleBasisFunction basis;
  basis.node = z;
  const int nf = disc.hier.fine.node_count();
  basis.corrector = Vector::Zero(nf);
  for (int element : node_support(disc.hier.coarse, z)) {
    basis.corrector += solve_corrector(disc, z, element, k, mu).to_fine(nf);
  }
  basis.fine = disc.fine_hat(z) + basis.corrector;
  return basis;
}

namespace {

SparseMatrix columns_to_sparse(const std::vector<Vector>& columns, int rows) {
  std::vector<Eigen::Triplet<double>> triplets;
  for (std::size_t j = 0; j < columns.size(); ++j) {
    for (int i = 0; i < rows; ++i) {
      if (columns[j][i] != 0.0) triplets.emplace_back(i, static_cast<int>(j), columns[j][i]);
    }
  }
  SparseMatrix m(rows, static_cast<int>(columns.size()));
  m.setFromTriplets(triplets.begin(), triplets.end());
  return m;
}

}  // namespace

LodSolution classical_lod_solve(const Discretization& disc, double mu, int k) {
  if (disc.problem.nonlinear) throw std::invalid_argument("classical LOD solve needs a linear problem");
  const auto& coarse = disc.hier.coarse;
  const int nf = disc.hier.fine.node_count();
  const auto& interior = disc.coarse_interior();
  const auto theta = disc.problem.coefficient.thetas(mu);

  std::vector<Vector> basis(interior.size());
  for (std::size_t i = 0; i < interior.size(); ++i) basis[i] = disc.fine_hat(interior[i]);
  for (int element = 0; element < coarse.element_count(); ++element) {
    std::vector<int> nodes;
    for (int v : coarse.elements[element]) {
      if (coarse.is_interior(v)) nodes.push_back(v);
    }
    if (nodes.empty()) continue;
    const PatchSpace space = make_patch_space(disc, element_patch(disc.hier, element, k));
    const ConstrainedSolver solver(space.matrix(theta), space.constraint);
    for (int z : nodes) {
      Vector rhs = Vector::Zero(space.size());
      for (int q = 0; q < disc.q_count(); ++q) rhs -= theta[q] * element_coupling(disc, space, element, z, q);
      const Vector w = solver.solve(rhs);
      Vector& target = basis[disc.coarse_interior_index[z]];
      for (std::size_t i = 0; i < space.dofs.size(); ++i) target[space.dofs[i]] += w[i];
    }
  }

  const SparseMatrix b = columns_to_sparse(basis, nf);
  const SparseMatrix a = disc.stiffness_at(theta);
  const SparseMatrix s = SparseMatrix(b.transpose()) * (a * b);
  const Vector load = assemble_load(disc.hier.fine, [&](const Point& x) { return disc.problem.source(x, mu); });
  LodSolution solution;
  solution.coarse = solve_spd(s, b.transpose() * load);
  solution.fine = b * solution.coarse;
  const SparseMatrix hats = extract_block(disc.embedding, std::vector<int>(), interior);
  solution.coarse_part = hats * solution.coarse;
  return solution;
}

}  // namespace rblod
