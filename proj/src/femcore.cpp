#include "rblod/femcore.hpp"

#include "rblod/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rblod {

std::array<Eigen::Vector2d, 3> hat_gradients(const Mesh& mesh, int element) {
  const auto& t = mesh.elements[element];
  const Point& a = mesh.nodes[t[0]];
  const Point& b = mesh.nodes[t[1]];
  const Point& c = mesh.nodes[t[2]];
  const double twice_area = (b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y());
  std::array<Eigen::Vector2d, 3> g;
  g[0] = Eigen::Vector2d(b.y() - c.y(), c.x() - b.x()) / twice_area;
  g[1] = Eigen::Vector2d(c.y() - a.y(), a.x() - c.x()) / twice_area;
  g[2] = Eigen::Vector2d(a.y() - b.y(), b.x() - a.x()) / twice_area;
  return g;
}

Eigen::Matrix3d element_stiffness(const Mesh& mesh, int element, const Matrix2& a) {
  const auto g = hat_gradients(mesh, element);
  const double area = mesh.area(element);
  Eigen::Matrix3d k;
  for (int i = 0; i < 3; ++i) {
    const Eigen::Vector2d ag = a * g[i];
    for (int j = 0; j < 3; ++j) k(j, i) = area * g[j].dot(ag);
  }
  return k;
}

ElementField constant_field(const Mesh& mesh, const Matrix2& a) { return ElementField(mesh.element_count(), a); }

ElementField sample_field(const Mesh& mesh, const std::function<Matrix2(const Point&)>& field) {
  ElementField values(mesh.element_count());
  for (int e = 0; e < mesh.element_count(); ++e) values[e] = field(mesh.barycenter(e));
  return values;
}

ElementField sample_term(const AffineCoefficient& coeff, int q, const Mesh& mesh) {
  return sample_field(mesh, [&](const Point& x) { return coeff.field_at(q, x); });
}

namespace {

void check_symmetric(const Matrix2& a) {
  const double scale = std::max({std::abs(a(0, 0)), std::abs(a(1, 1)), std::abs(a(0, 1)), std::abs(a(1, 0)), 1e-300});
  if (std::abs(a(0, 1) - a(1, 0)) > 1e-14 * scale) {
    throw std::invalid_argument("coefficient field must be symmetric");
  }
}

template <class ElementRange>
SparseMatrix stiffness_over(const Mesh& mesh, std::span<const Matrix2> field, const ElementRange& elements,
                            std::size_t count) {
  if (field.size() != static_cast<std::size_t>(mesh.element_count())) {
    throw std::invalid_argument("field must cover every element");
  }
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(9 * count);
  for (int e : elements) {
    check_symmetric(field[e]);
    const Eigen::Matrix3d k = element_stiffness(mesh, e, field[e]);
    const auto& t = mesh.elements[e];
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) triplets.emplace_back(t[i], t[j], k(i, j));
    }
  }
  SparseMatrix a(mesh.node_count(), mesh.node_count());
  a.setFromTriplets(triplets.begin(), triplets.end());
  return a;
}

struct ElementIota {
  int n;
  struct Iter {
    int i;
    int operator*() const { return i; }
    Iter& operator++() {
      ++i;
      return *this;
    }
    bool operator!=(const Iter& o) const { return i != o.i; }
  };
  Iter begin() const { return {0}; }
  Iter end() const { return {n}; }
};

}  // namespace

SparseMatrix assemble_stiffness(const Mesh& mesh, std::span<const Matrix2> field) {
  return stiffness_over(mesh, field, ElementIota{mesh.element_count()}, mesh.element_count());
}

SparseMatrix assemble_stiffness(const Mesh& mesh, std::span<const Matrix2> field, std::span<const int> elements) {
  return stiffness_over(mesh, field, elements, elements.size());
}

SparseMatrix assemble_mass(const Mesh& mesh) {
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(9 * mesh.elements.size());
  for (int e = 0; e < mesh.element_count(); ++e) {
    const double area = mesh.area(e);
    const auto& t = mesh.elements[e];
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) triplets.emplace_back(t[i], t[j], area / 12.0 * (i == j ? 2.0 : 1.0));
    }
  }
  SparseMatrix m(mesh.node_count(), mesh.node_count());
  m.setFromTriplets(triplets.begin(), triplets.end());
  return m;
}

Vector assemble_load(const Mesh& mesh, const std::function<double(const Point&)>& f) {
  Vector b = Vector::Zero(mesh.node_count());
  for (int e = 0; e < mesh.element_count(); ++e) {
    const auto& t = mesh.elements[e];
    const double w = mesh.area(e) / 3.0;
    for (int i = 0; i < 3; ++i) {
      const int a = t[i];
      const int c = t[(i + 1) % 3];
      // Both end points of the edge take half the hat value at its midpoint.
      const double value = 0.5 * w * f(0.5 * (mesh.nodes[a] + mesh.nodes[c]));
      b[a] += value;
      b[c] += value;
    }
  }
  return b;
}

SparseMatrix coarse_embedding(const MeshHierarchy& hier) {
  const Mesh& coarse = hier.coarse;
  const Mesh& fine = hier.fine;
  std::vector<int> parent(fine.node_count(), -1);
  for (int e = 0; e < fine.element_count(); ++e) {
    for (int v : fine.elements[e]) {
      if (parent[v] < 0) parent[v] = hier.fine_to_coarse_element[e];
    }
  }
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(3 * fine.nodes.size());
  for (int v = 0; v < fine.node_count(); ++v) {
    const int k = parent[v];
    const auto& t = coarse.elements[k];
    const auto g = hat_gradients(coarse, k);
    for (int i = 0; i < 3; ++i) {
      const double value = 1.0 / 3.0 + g[i].dot(fine.nodes[v] - coarse.barycenter(k));
      if (std::abs(value) > 1e-14) triplets.emplace_back(v, t[i], value);
    }
  }
  SparseMatrix p(fine.node_count(), coarse.node_count());
  p.setFromTriplets(triplets.begin(), triplets.end());
  return p;
}

SparseMatrix quasi_interpolation_matrix(const MeshHierarchy& hier) {
  const SparseMatrix p = coarse_embedding(hier);
  const SparseMatrix mass = assemble_mass(hier.fine);
  const auto& interior = hier.coarse.interior_nodes;
  SparseMatrix p_interior = extract_block(p, std::vector<int>(), interior);
  SparseMatrix weights = SparseMatrix(p_interior.transpose()) * mass;  // (v, Phi_z)
  const Vector ones = Vector::Ones(hier.fine.node_count());
  const Vector denom = weights * ones;  // (1, Phi_z)
  for (int k = 0; k < weights.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(weights, k); it; ++it) it.valueRef() /= denom[it.row()];
  }
  weights.prune(0.0);
  return weights;
}

Vector l2_projection_to_coarse(const MeshHierarchy& hier, const Vector& v) {
  if (v.size() != hier.fine.node_count()) throw std::invalid_argument("fine function has wrong length");
  const auto& interior = hier.coarse.interior_nodes;
  Vector result = Vector::Zero(hier.coarse.node_count());
  if (interior.empty()) return result;
  const SparseMatrix p = extract_block(coarse_embedding(hier), std::vector<int>(), interior);
  const SparseMatrix fine_mass = assemble_mass(hier.fine);
  const Vector rhs = p.transpose() * (fine_mass * v);
  const SparseMatrix coarse_mass = extract_block(assemble_mass(hier.coarse), interior, interior);
  const Vector c = solve_spd(coarse_mass, rhs);
  for (std::size_t i = 0; i < interior.size(); ++i) result[interior[i]] = c[i];
  return result;
}

double l2_norm(const Mesh& mesh, const Vector& v) {
  double sum = 0.0;
  for (int e = 0; e < mesh.element_count(); ++e) {
    const auto& t = mesh.elements[e];
    const double a = v[t[0]], b = v[t[1]], c = v[t[2]];
    sum += mesh.area(e) / 6.0 * (a * a + b * b + c * c + a * b + b * c + c * a);
  }
  return std::sqrt(std::max(sum, 0.0));
}

double h1_seminorm(const Mesh& mesh, const Vector& v) {
  double sum = 0.0;
  for (int e = 0; e < mesh.element_count(); ++e) {
    const auto& t = mesh.elements[e];
    const auto g = hat_gradients(mesh, e);
    const Eigen::Vector2d grad = v[t[0]] * g[0] + v[t[1]] * g[1] + v[t[2]] * g[2];
    sum += mesh.area(e) * grad.squaredNorm();
  }
  return std::sqrt(sum);
}

double h1_norm(const Mesh& mesh, const Vector& v) { return std::hypot(l2_norm(mesh, v), h1_seminorm(mesh, v)); }

double energy_norm(const Mesh& mesh, std::span<const Matrix2> field, const Vector& v, std::span<const int> region) {
  auto contribution = [&](int e) {
    const auto& t = mesh.elements[e];
    const auto g = hat_gradients(mesh, e);
    const Eigen::Vector2d grad = v[t[0]] * g[0] + v[t[1]] * g[1] + v[t[2]] * g[2];
    return mesh.area(e) * grad.dot(field[e] * grad);
  };
  double sum = 0.0;
  if (region.empty()) {
    for (int e = 0; e < mesh.element_count(); ++e) sum += contribution(e);
  } else {
    for (int e : region) sum += contribution(e);
  }
  return std::sqrt(std::max(sum, 0.0));
}

double norm(const Mesh& mesh, const Vector& v, NormKind kind) {
  switch (kind) {
    case NormKind::L2: return l2_norm(mesh, v);
    case NormKind::H1Seminorm: return h1_seminorm(mesh, v);
    case NormKind::H1: return h1_norm(mesh, v);
  }
  return 0.0;
}

double relative_error(const Mesh& mesh, const Vector& error, const Vector& reference, NormKind kind) {
  const double denominator = norm(mesh, reference, kind);
  if (denominator == 0.0) throw DivisionError("reference norm is zero");
  return norm(mesh, error, kind) / denominator;
}

SparseMatrix extract_block(const SparseMatrix& a, std::span<const int> rows, std::span<const int> cols) {
  // An empty row list means "all rows".
  const bool all_rows = rows.empty();
  std::vector<int> row_map;
  if (!all_rows) {
    row_map.assign(a.rows(), -1);
    for (std::size_t i = 0; i < rows.size(); ++i) row_map[rows[i]] = static_cast<int>(i);
  }
  std::vector<Eigen::Triplet<double>> triplets;
  for (std::size_t j = 0; j < cols.size(); ++j) {
    for (SparseMatrix::InnerIterator it(a, cols[j]); it; ++it) {
      const int r = all_rows ? static_cast<int>(it.row()) : row_map[it.row()];
      if (r >= 0) triplets.emplace_back(r, static_cast<int>(j), it.value());
    }
  }
  SparseMatrix block(all_rows ? a.rows() : static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  block.setFromTriplets(triplets.begin(), triplets.end());
  return block;
}

void SpdFactorization::compute(const SparseMatrix& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("matrix must be square");
  size_ = static_cast<int>(a.rows());
  llt_.compute(a);
  if (llt_.info() != Eigen::Success) {
    throw SingularMatrixError("Cholesky factorization failed: matrix not positive definite", 0.0);
  }
  const Vector d = llt_.matrixL().nestedExpression().diagonal();
  const double ratio = d.minCoeff() / d.maxCoeff();
  if (!(ratio * ratio > 1e-24)) throw SingularMatrixError("matrix numerically singular", ratio * ratio);
}

Vector SpdFactorization::solve(const Vector& b) const { return llt_.solve(b); }

DenseMatrix SpdFactorization::solve(const DenseMatrix& b) const { return llt_.solve(b); }

namespace {

void check_residual(const SparseMatrix& a, const Vector& x, const Vector& b) {
  const double residual = (a * x - b).norm();
  const double scale = a.norm() * x.norm() + b.norm();
  if (!std::isfinite(residual) || residual > 1e-10 * scale) {
    throw SingularMatrixError("linear solve residual too large", scale > 0 ? residual / scale : residual);
  }
}

}  // namespace

Vector solve_spd(const SparseMatrix& a, const Vector& b) {
  if (a.rows() != b.size()) throw std::invalid_argument("right-hand side has wrong length");
  SpdFactorization factor(a);
  const Vector x = factor.solve(b);
  check_residual(a, x, b);
  return x;
}

Vector solve_general(const SparseMatrix& a, const Vector& b) {
  if (a.rows() != a.cols() || a.rows() != b.size()) throw std::invalid_argument("system dimensions do not match");
  SparseMatrix ac = a;
  ac.makeCompressed();
  Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
  lu.compute(ac);
  if (lu.info() != Eigen::Success) throw SingularMatrixError("LU factorization failed: " + lu.lastErrorMessage(), 0.0);
  const Vector x = lu.solve(b);
  check_residual(a, x, b);
  return x;
}

Vector fem_reference_solve(const ProblemDefinition& problem, double mu, const MeshHierarchy& hier) {
  const Mesh& fine = hier.fine;
  const ElementField field = sample_field(fine, [&](const Point& x) { return problem.coefficient.evaluate(x, mu); });
  const SparseMatrix a = assemble_stiffness(fine, field);
  const Vector b = assemble_load(fine, [&](const Point& x) { return problem.source(x, mu); });
  const auto& dofs = fine.interior_nodes;
  Vector u = Vector::Zero(fine.node_count());
  if (dofs.empty()) return u;
  const SparseMatrix ai = extract_block(a, dofs, dofs);
  Vector bi(dofs.size());
  for (std::size_t i = 0; i < dofs.size(); ++i) bi[i] = b[dofs[i]];
  const Vector ui = solve_spd(ai, bi);
  for (std::size_t i = 0; i < dofs.size(); ++i) u[dofs[i]] = ui[i];
  return u;
}

}  // namespace rblod
