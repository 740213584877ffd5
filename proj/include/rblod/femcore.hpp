#pragma once

#include "rblod/coeffs.hpp"
#include "rblod/geometry.hpp"

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace rblod {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Vector = Eigen::VectorXd;
using DenseMatrix = Eigen::MatrixXd;
using ElementField = std::vector<Matrix2>;

// Gradients of the three barycentric coordinates of an element.
std::array<Eigen::Vector2d, 3> hat_gradients(const Mesh& mesh, int element);

// 3x3 element stiffness |T| g_i . A g_j.
Eigen::Matrix3d element_stiffness(const Mesh& mesh, int element, const Matrix2& a);

ElementField constant_field(const Mesh& mesh, const Matrix2& a);
ElementField sample_field(const Mesh& mesh, const std::function<Matrix2(const Point&)>& field);
// Affine term q sampled at element barycenters.
ElementField sample_term(const AffineCoefficient& coeff, int q, const Mesh& mesh);

SparseMatrix assemble_stiffness(const Mesh& mesh, std::span<const Matrix2> field);
// Assembly restricted to a subset of elements (full node numbering).
SparseMatrix assemble_stiffness(const Mesh& mesh, std::span<const Matrix2> field, std::span<const int> elements);
SparseMatrix assemble_mass(const Mesh& mesh);
Vector assemble_load(const Mesh& mesh, const std::function<double(const Point&)>& f);

// Coarse hats evaluated at fine nodes: fine nodes x coarse nodes.
SparseMatrix coarse_embedding(const MeshHierarchy& hier);
// Rows follow hier.coarse.interior_nodes, columns are fine nodes.
SparseMatrix quasi_interpolation_matrix(const MeshHierarchy& hier);
// Coarse function over all coarse nodes, zero on the boundary.
Vector l2_projection_to_coarse(const MeshHierarchy& hier, const Vector& v);

enum class NormKind { L2, H1Seminorm, H1 };

double l2_norm(const Mesh& mesh, const Vector& v);
double h1_seminorm(const Mesh& mesh, const Vector& v);
double h1_norm(const Mesh& mesh, const Vector& v);
// Energy norm over the given elements, or over the whole mesh when empty.
double energy_norm(const Mesh& mesh, std::span<const Matrix2> field, const Vector& v,
                   std::span<const int> region = {});
double norm(const Mesh& mesh, const Vector& v, NormKind kind);
double relative_error(const Mesh& mesh, const Vector& error, const Vector& reference, NormKind kind);

// Submatrix A[rows, cols]; index lists need not be sorted.
SparseMatrix extract_block(const SparseMatrix& a, std::span<const int> rows, std::span<const int> cols);

class SpdFactorization {
 public:
  SpdFactorization() = default;
  explicit SpdFactorization(const SparseMatrix& a) { compute(a); }
  void compute(const SparseMatrix& a);
  Vector solve(const Vector& b) const;
  DenseMatrix solve(const DenseMatrix& b) const;
  int size() const { return size_; }

 private:
  Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> llt_;
  int size_ = 0;
};

Vector solve_spd(const SparseMatrix& a, const Vector& b);
Vector solve_general(const SparseMatrix& a, const Vector& b);

// Fine Galerkin solution for a linear problem, over all fine nodes.
Vector fem_reference_solve(const ProblemDefinition& problem, double mu, const MeshHierarchy& hier);

}  // namespace rblod
