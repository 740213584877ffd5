#pragma once

#include "rblod/coeffs.hpp"
#include "rblod/femcore.hpp"
#include "rblod/geometry.hpp"

#include <Eigen/Cholesky>

#include <span>
#include <vector>

namespace rblod {

// Parameter-independent fine-scale data shared by the offline and online
// phases.
struct Discretization {
  ProblemDefinition problem;
  MeshHierarchy hier;
  std::vector<ElementField> terms;       // a_q sampled per fine element
  std::vector<SparseMatrix> stiffness;   // per q, all fine nodes
  SparseMatrix laplacian;
  SparseMatrix mass;
  SparseMatrix embedding;                // fine nodes x coarse nodes
  SparseMatrix constraint;               // interior coarse nodes x fine nodes
  std::vector<int> coarse_interior_index;  // coarse node -> row, or -1

  int q_count() const { return static_cast<int>(terms.size()); }
  const std::vector<int>& coarse_interior() const { return hier.coarse.interior_nodes; }
  ElementField field(std::span<const double> theta) const;
  ElementField field_at(double mu) const;
  SparseMatrix stiffness_at(std::span<const double> theta) const;
  // Dense fine representation of the coarse hat at coarse node z.
  Vector fine_hat(int z) const;
};

Discretization make_discretization(const ProblemDefinition& problem, int n_coarse, int levels);
Discretization make_discretization(const ProblemDefinition& problem, MeshHierarchy hier);

// Local pieces of the constrained space W_h(U) for one patch.
struct PatchSpace {
  Patch patch;
  std::vector<int> dofs;             // fine interior nodes of the patch (sorted)
  std::vector<int> constraint_rows;  // interior coarse rows touching the patch
  SparseMatrix constraint;           // constraint_rows x dofs
  std::vector<SparseMatrix> stiffness;
  SparseMatrix laplacian;

  int size() const { return static_cast<int>(dofs.size()); }
  SparseMatrix matrix(std::span<const double> theta) const;
  Vector to_fine(const Vector& local, int fine_count) const;
};

PatchSpace make_patch_space(const Discretization& disc, Patch patch);

// Solves S w + C^T lambda = r, C w = 0 by a Schur complement on lambda.
class ConstrainedSolver {
 public:
  ConstrainedSolver(const SparseMatrix& matrix, const SparseMatrix& constraint);
  Vector solve(const Vector& rhs) const;
  DenseMatrix solve(const DenseMatrix& rhs) const;
  int size() const { return factor_.size(); }

 private:
  SpdFactorization factor_;
  SparseMatrix constraint_;
  DenseMatrix y_;  // S^-1 C^T
  Eigen::LLT<DenseMatrix> schur_;
};

Vector solve_constrained(const PatchSpace& space, const SparseMatrix& matrix, const Vector& rhs);

// (int_K a_q grad Phi_z . grad w_i)_i over the patch dofs.
Vector element_coupling(const Discretization& disc, const PatchSpace& space, int element, int z, int q);

struct CorrectorPiece {
  int node = -1;
  int element = -1;
  int k = 0;
  std::vector<int> dofs;
  Vector values;

  Vector to_fine(int fine_count) const;
};

CorrectorPiece solve_corrector(const Discretization& disc, int z, int element, int k, double mu);

struct MultiscaleBasisFunction {
  int node = -1;
  Vector corrector;  // fine nodes
  Vector fine;       // Phi_z + corrector
};

MultiscaleBasisFunction assemble_ms_basis(const Discretization& disc, double mu, int z, int k);

struct LodSolution {
  Vector coarse;  // over interior coarse nodes
  Vector fine;
  Vector coarse_part;  // fine representation of sum u_z Phi_z
};

LodSolution classical_lod_solve(const Discretization& disc, double mu, int k);

}  // namespace rblod
