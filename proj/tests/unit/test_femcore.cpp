#include "rblod/errors.hpp"
#include "rblod/femcore.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <stdexcept>

using namespace rblod;

namespace {

DenseMatrix dense(const SparseMatrix& a) { return DenseMatrix(a); }

Vector random_vector(int n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

// Stiffness entry of one element from explicit P1 shape-function gradients.
double oracle_entry(const Mesh& mesh, int e, int i, int j, const Matrix2& a) {
  const auto& t = mesh.elements[e];
  auto grad = [&](int local) {
    const Point& p0 = mesh.nodes[t[local]];
    const Point& p1 = mesh.nodes[t[(local + 1) % 3]];
    const Point& p2 = mesh.nodes[t[(local + 2) % 3]];
    const Eigen::Vector2d edge = p2 - p1;
    Eigen::Vector2d normal(edge.y(), -edge.x());
    return Eigen::Vector2d(normal / normal.dot(p0 - p1));
  };
  return mesh.area(e) * grad(i).dot(a * grad(j));
}

}  // namespace

TEST_CASE("identity stiffness on a single square") {
  const Mesh mesh = build_unit_square_mesh(1);
  const SparseMatrix a = assemble_stiffness(mesh, constant_field(mesh, Matrix2::Identity()));
  const DenseMatrix d = dense(a);
  CHECK(d.rows() == 4);
  CHECK((d - d.transpose()).norm() < 1e-15);
  CHECK(d.rowwise().sum().norm() < 1e-14);
  CHECK(d.trace() == doctest::Approx(4.0));
}

TEST_CASE("stiffness matches the per-element gradient oracle") {
  const Mesh mesh = build_unit_square_mesh(3);
  Matrix2 a;
  a << 2.0, 0.3, 0.3, 1.0;
  const SparseMatrix s = assemble_stiffness(mesh, constant_field(mesh, a));
  DenseMatrix oracle = DenseMatrix::Zero(mesh.node_count(), mesh.node_count());
  for (int e = 0; e < mesh.element_count(); ++e) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) oracle(mesh.elements[e][i], mesh.elements[e][j]) += oracle_entry(mesh, e, i, j, a);
    }
  }
  CHECK((dense(s) - oracle).norm() <= 1e-14 * oracle.norm());

  Matrix2 nonsym;
  nonsym << 1.0, 0.5, 0.0, 1.0;
  CHECK_THROWS_AS(assemble_stiffness(mesh, constant_field(mesh, nonsym)), std::invalid_argument);
  CHECK_THROWS_AS(assemble_stiffness(mesh, ElementField(3, Matrix2::Identity())), std::invalid_argument);
}

TEST_CASE("subset assembly sums to the full matrix") {
  const Mesh mesh = build_unit_square_mesh(4);
  const ElementField f = constant_field(mesh, Matrix2::Identity());
  std::vector<int> even, odd;
  for (int e = 0; e < mesh.element_count(); ++e) (e % 2 ? odd : even).push_back(e);
  const SparseMatrix sum = assemble_stiffness(mesh, f, even) + assemble_stiffness(mesh, f, odd);
  CHECK((dense(sum) - dense(assemble_stiffness(mesh, f))).norm() < 1e-13);
}

TEST_CASE("mass and load") {
  const Mesh mesh = build_unit_square_mesh(4);
  const SparseMatrix m = assemble_mass(mesh);
  const Vector ones = Vector::Ones(mesh.node_count());
  CHECK(ones.dot(m * ones) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(assemble_load(mesh, [](const Point&) { return 0.0; }).norm() == 0.0);
  const Vector b = assemble_load(mesh, [](const Point&) { return 1.0; });
  for (int v : mesh.interior_nodes) {
    double support = 0.0;
    for (int e : mesh.node_elements[v]) support += mesh.area(e);
    CHECK(b[v] == doctest::Approx(support / 3.0).epsilon(1e-14));
  }
}

TEST_CASE("norms") {
  const Mesh mesh = build_unit_square_mesh(8);
  Vector linear(mesh.node_count());
  for (int v = 0; v < mesh.node_count(); ++v) linear[v] = mesh.nodes[v].x();
  CHECK(l2_norm(mesh, linear) == doctest::Approx(std::sqrt(1.0 / 3.0)).epsilon(1e-13));
  CHECK(h1_seminorm(mesh, linear) == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(h1_norm(mesh, linear) == doctest::Approx(std::sqrt(4.0 / 3.0)).epsilon(1e-13));
  const ElementField two = constant_field(mesh, 2.0 * Matrix2::Identity());
  CHECK(energy_norm(mesh, two, linear) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-13));
  std::vector<int> half;
  for (int e = 0; e < mesh.element_count(); ++e) {
    if (mesh.barycenter(e).x() < 0.5) half.push_back(e);
  }
  CHECK(energy_norm(mesh, two, linear, half) == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(relative_error(mesh, linear, 2.0 * linear, NormKind::L2) == doctest::Approx(0.5));
  CHECK_THROWS_AS(relative_error(mesh, linear, Vector::Zero(mesh.node_count()), NormKind::H1), DivisionError);
}

TEST_CASE("energy norm bounds follow the spectral bounds") {
  const ProblemDefinition p = model_problem_1();
  const Mesh mesh = build_unit_square_mesh(16);
  const std::vector<double> params = {0.7};
  const double alpha = coercivity_lower_bound(p.coefficient, params, mesh);
  const double beta = continuity_upper_bound(p.coefficient, params, mesh);
  const ElementField field = sample_field(mesh, [&](const Point& x) { return p.coefficient.evaluate(x, 0.7); });
  for (unsigned s = 0; s < 5; ++s) {
    const Vector v = random_vector(mesh.node_count(), s);
    const double e2 = std::pow(energy_norm(mesh, field, v), 2);
    const double h2 = std::pow(h1_seminorm(mesh, v), 2);
    CHECK(alpha * h2 <= e2 * (1 + 1e-12));
    CHECK(e2 <= beta * h2 * (1 + 1e-12));
  }
}

TEST_CASE("coarse embedding is a partition of unity") {
  const MeshHierarchy h = refine_uniform(build_unit_square_mesh(4), 2);
  const SparseMatrix p = coarse_embedding(h);
  const Vector row_sums = p * Vector::Ones(h.coarse.node_count());
  CHECK((row_sums - Vector::Ones(h.fine.node_count())).cwiseAbs().maxCoeff() < 1e-14);
  for (int v = 0; v < h.coarse.node_count(); ++v) CHECK(p.coeff(h.coarse_node_in_fine[v], v) == doctest::Approx(1.0));
}

TEST_CASE("quasi interpolation weights") {
  const MeshHierarchy h = refine_uniform(build_unit_square_mesh(4), 2);
  const SparseMatrix c = quasi_interpolation_matrix(h);
  const SparseMatrix p = coarse_embedding(h);
  const SparseMatrix mass = assemble_mass(h.fine);
  const auto& interior = h.coarse.interior_nodes;
  CHECK(c.rows() == static_cast<int>(interior.size()));
  for (std::size_t i = 0; i < interior.size(); ++i) {
    const Vector hat = p.col(interior[i]);
    const double expected = hat.dot(mass * hat) / Vector::Ones(h.fine.node_count()).dot(mass * hat);
    CHECK((c * hat)[i] == doctest::Approx(expected).epsilon(1e-13));
  }
}

TEST_CASE("l2 projection to the coarse space") {
  const MeshHierarchy h = refine_uniform(build_unit_square_mesh(4), 2);
  const SparseMatrix p = coarse_embedding(h);
  Vector coarse = Vector::Zero(h.coarse.node_count());
  for (int v : h.coarse.interior_nodes) coarse[v] = std::sin(v + 1.0);
  const Vector back = l2_projection_to_coarse(h, p * coarse);
  CHECK((back - coarse).cwiseAbs().maxCoeff() < 1e-12);

  // Dense normal-equation oracle.
  const Vector v = random_vector(h.fine.node_count(), 11);
  const auto& interior = h.coarse.interior_nodes;
  const DenseMatrix pi = dense(extract_block(p, std::vector<int>(), interior));
  const DenseMatrix m = dense(assemble_mass(h.fine));
  const DenseMatrix gram = pi.transpose() * m * pi;
  const Vector oracle = gram.ldlt().solve(pi.transpose() * m * v);
  const Vector result = l2_projection_to_coarse(h, v);
  for (std::size_t i = 0; i < interior.size(); ++i) CHECK(result[interior[i]] == doctest::Approx(oracle[i]).epsilon(1e-12));

  // A fine function orthogonal to all coarse hats projects to zero.
  const Vector w = v - pi * oracle;
  CHECK(l2_projection_to_coarse(h, w).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("extract block") {
  const Mesh mesh = build_unit_square_mesh(2);
  const SparseMatrix a = assemble_stiffness(mesh, constant_field(mesh, Matrix2::Identity()));
  const std::vector<int> rows = {4, 1}, cols = {3, 4, 0};
  const DenseMatrix b = dense(extract_block(a, rows, cols));
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 3; ++j) CHECK(b(i, j) == a.coeff(rows[i], cols[j]));
  }
}

TEST_CASE("linear solvers") {
  SparseMatrix id(3, 3);
  id.setIdentity();
  const Vector b(Eigen::Vector3d(1, 2, 3));
  CHECK((solve_spd(id, b) - b).norm() == 0.0);

  SparseMatrix two(2, 2);
  two.insert(0, 0) = 2;
  two.insert(0, 1) = 1;
  two.insert(1, 0) = 1;
  two.insert(1, 1) = 2;
  const Vector x = solve_spd(two, Vector::Constant(2, 3.0));
  CHECK(x[0] == doctest::Approx(1.0));
  CHECK(x[1] == doctest::Approx(1.0));

  const int n = 50;
  DenseMatrix r(n, n);
  for (int j = 0; j < n; ++j) r.col(j) = random_vector(n, 100 + j);
  const DenseMatrix spd = r * r.transpose() + n * DenseMatrix::Identity(n, n);
  const SparseMatrix s = spd.sparseView();
  const Vector rhs = random_vector(n, 5);
  const Vector oracle = spd.llt().solve(rhs);
  CHECK((solve_spd(s, rhs) - oracle).norm() <= 1e-10 * oracle.norm());

  DenseMatrix g = spd;
  g(0, 1) += 3.0;
  const Vector general = solve_general(g.sparseView(), rhs);
  CHECK((general - g.lu().solve(rhs)).norm() <= 1e-10 * general.norm());

  SparseMatrix singular(2, 2);
  singular.insert(0, 0) = 1;
  singular.insert(1, 1) = 0;
  singular.makeCompressed();
  CHECK_THROWS_AS(solve_spd(singular, Vector::Ones(2)), SingularMatrixError);
  CHECK_THROWS_AS(solve_general(singular, Vector::Ones(2)), SingularMatrixError);
  CHECK_THROWS_AS(solve_spd(two, Vector::Ones(3)), std::invalid_argument);
}

TEST_CASE("fine reference solve") {
  ProblemDefinition p;
  p.coefficient.theta = {[](double) { return 1.0; }};
  p.coefficient.field_at = [](int, const Point&) { return Matrix2::Identity(); };
  p.source = [](const Point&, double) { return 1.0; };
  const MeshHierarchy h = refine_uniform(build_unit_square_mesh(2), 0);
  const Vector u = fem_reference_solve(p, 0.0, h);
  // One interior node at the center: u = (1, phi) / a(phi, phi).
  const SparseMatrix a = assemble_stiffness(h.fine, constant_field(h.fine, Matrix2::Identity()));
  const Vector b = assemble_load(h.fine, [](const Point&) { return 1.0; });
  const int c = h.fine.interior_nodes.at(0);
  CHECK(u[c] == doctest::Approx(b[c] / a.coeff(c, c)).epsilon(1e-14));
  for (int v = 0; v < h.fine.node_count(); ++v) {
    if (v != c) CHECK(u[v] == 0.0);
  }

  p.source = [](const Point&, double) { return 0.0; };
  CHECK(fem_reference_solve(p, 0.0, refine_uniform(build_unit_square_mesh(4), 1)).norm() == 0.0);
}
