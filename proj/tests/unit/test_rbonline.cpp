#include "rblod/errors.hpp"
#include "rblod/rbonline.hpp"

#include <doctest.h>

#include <random>

using namespace rblod;

namespace {

struct Fixture {
  Discretization disc;
  OfflineDB db;
};

OfflineConfig config(int n, int levels, int k, double tol) {
  OfflineConfig c;
  c.n_coarse = n;
  c.levels = levels;
  c.k = k;
  c.tol = tol;
  c.train_size = 20;
  return c;
}

const Fixture& mp1() {
  static const Fixture f = [] {
    Fixture x{make_discretization(model_problem_1(), 4, 2), {}};
    x.db = OfflineBuilder(x.disc, config(4, 2, 1, 0.05)).run();
    return x;
  }();
  return f;
}

const Fixture& mp2() {
  static const Fixture f = [] {
    Fixture x{make_discretization(model_problem_2(), 4, 2), {}};
    x.db = OfflineBuilder(x.disc, config(4, 2, 1, 0.01)).run();
    return x;
  }();
  return f;
}

double relative_frobenius(const SparseMatrix& a, const SparseMatrix& b) {
  return (DenseMatrix(a) - DenseMatrix(b)).norm() / DenseMatrix(b).norm();
}

}  // namespace

TEST_CASE("summed global matrix equals direct fine assembly") {
  const auto& [disc, db] = mp1();
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int i = 0; i < 3; ++i) {
    const double mu = u(rng);
    const auto theta = disc.problem.coefficient.thetas(mu);
    const OnlineBasis basis = online_basis(db, disc.problem, mu);
    const SparseMatrix b = basis_matrix(disc, db, basis);
    const SparseMatrix direct = SparseMatrix(b.transpose()) * disc.stiffness_at(theta) * b;
    const SparseMatrix summed = assemble_global(db, basis, theta);
    CHECK(relative_frobenius(summed, direct) <= 1e-10);
    CHECK((DenseMatrix(summed) - DenseMatrix(summed).transpose()).norm() <= 1e-12 * DenseMatrix(summed).norm());
  }
}

TEST_CASE("node-varying parameters match fine assembly column by column") {
  const auto& [disc, db] = mp1();
  const int count = static_cast<int>(db.spaces.size());
  std::vector<double> params(count);
  std::vector<std::vector<double>> theta(count);
  for (int n = 0; n < count; ++n) {
    params[n] = 0.5 + 0.4 * n;
    theta[n] = disc.problem.coefficient.thetas(params[n]);
  }
  const OnlineBasis basis = online_basis(db, disc.problem, params);
  const SparseMatrix b = basis_matrix(disc, db, basis);
  const SparseMatrix summed = assemble_global(db, basis, theta);
  for (int m = 0; m < count; ++m) {
    const Vector column = SparseMatrix(b.transpose()) * (disc.stiffness_at(theta[m]) * b.col(m));
    CHECK((Vector(summed.col(m)) - column).norm() <= 1e-10 * column.norm());
  }
}

TEST_CASE("online basis functions are Galerkin-orthogonal to their local space") {
  const auto& [disc, db] = mp1();
  const double mu = 3.7;
  const auto theta = disc.problem.coefficient.thetas(mu);
  const SparseMatrix a = disc.stiffness_at(theta);
  const OnlineBasis basis = online_basis(db, disc.problem, mu);
  const int nf = disc.hier.fine.node_count();
  for (std::size_t n = 0; n < db.spaces.size(); ++n) {
    const auto& space = db.spaces[n];
    const Vector v = online_basis_function(disc, space, basis.coefficients[n]);
    DenseMatrix xi = DenseMatrix::Zero(nf, space.dimension());
    for (std::size_t i = 0; i < space.support.size(); ++i) xi.row(space.support[i]) = space.basis.row(i);
    const Vector av = a * v;
    CHECK((xi.transpose() * av).norm() <= 1e-10 * av.norm());
  }
}

TEST_CASE("global load with f = 1") {
  const auto& [disc, db] = mp1();
  const OnlineBasis basis = online_basis(db, disc.problem, 1.0);
  const SparseMatrix b = basis_matrix(disc, db, basis);
  const Vector load = assemble_global_load(disc, b, 1.0);
  const Vector ones = Vector::Ones(disc.hier.fine.node_count());
  for (int n = 0; n < b.cols(); ++n) {
    const Vector column = b.col(n);
    const double integral = column.dot(disc.mass * ones);
    CHECK(load[n] == doctest::Approx(integral).epsilon(1e-12));
  }
}

TEST_CASE("one-dimensional local space gives the closed-form ratio") {
  const auto& [disc, db] = mp1();
  LocalRBSpace s = db.spaces[4];
  s.parameters.resize(1);
  s.basis = s.basis.leftCols(1).eval();
  for (auto& d : s.D) d = d.topLeftCorner(1, 1).eval();
  for (auto& f : s.F) f = f.head(1).eval();
  const auto theta = disc.problem.coefficient.thetas(2.2);
  double num = 0.0, den = 0.0;
  for (std::size_t q = 0; q < theta.size(); ++q) {
    num += theta[q] * s.F[q][0];
    den += theta[q] * s.D[q](0, 0);
  }
  CHECK(online_local_solve(s, theta)[0] == doctest::Approx(-num / den).epsilon(1e-14));
  s.D.clear();
  CHECK_THROWS_AS(online_local_solve(s, theta), InconsistentDatabaseError);
}

TEST_CASE("zero source gives the zero solution") {
  const auto& [disc, db] = mp1();
  Discretization zero = disc;
  zero.problem.source = [](const Point&, double) { return 0.0; };
  const OnlineSolution s = online_solve(zero, db, 1.5);
  CHECK(s.coarse.norm() == 0.0);
  CHECK(s.fine.norm() == 0.0);
}

TEST_CASE("global matrix sparsity follows the node pairs") {
  const auto& [disc, db] = mp1();
  const OnlineBasis basis = online_basis(db, disc.problem, 1.0);
  const SparseMatrix s = assemble_global(db, basis, disc.problem.coefficient.thetas(1.0));
  std::size_t expected = 0;
  for (const auto& p : db.pairs) expected += p.n == p.m ? 1 : 2;
  CHECK(static_cast<std::size_t>(s.nonZeros()) == expected);
}

TEST_CASE("parameters outside D are clamped") {
  const auto& [disc, db] = mp1();
  std::vector<double> params(db.spaces.size(), 1.0);
  params[0] = -1.0;
  params[1] = 9.0;
  const OnlineBasis basis = online_basis(db, disc.problem, params);
  CHECK(basis.clamped == 2);
  CHECK(basis.parameters[0] == 0.0);
  CHECK(basis.parameters[1] == 5.0);
  CHECK_THROWS_AS(online_basis(db, disc.problem, std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("saturated patches reproduce the multiscale basis at snapshot parameters") {
  const Discretization disc = make_discretization(model_problem_1(), 4, 1);
  const OfflineDB db = OfflineBuilder(disc, config(4, 1, 4, 0.05)).run();
  const auto& space = db.space_of_node(12);
  for (int element : node_support(disc.hier.coarse, 12)) {
    REQUIRE(static_cast<int>(element_patch(disc.hier, element, 4).coarse_elements.size()) ==
            disc.hier.coarse.element_count());
  }
  for (double mu : space.parameters) {
    const OnlineBasis basis = online_basis(db, disc.problem, mu);
    const int index = disc.coarse_interior_index[12];
    const Vector rb = online_basis_function(disc, space, basis.coefficients[index]);
    const Vector ms = assemble_ms_basis(disc, mu, 12, 4).fine;
    CHECK(h1_seminorm(disc.hier.fine, rb - ms) <= 1e-8);
  }
}

TEST_CASE("online solution approximates the fine solution") {
  const auto& [disc, db] = mp1();
  const double mu = 2.012;
  const OnlineSolution s = online_solve(disc, db, mu);
  const Vector reference = fem_reference_solve(disc.problem, mu, disc.hier);
  CHECK(relative_error(disc.hier.fine, s.fine - reference, reference, NormKind::H1) < 0.3);
  CHECK(s.coarse.size() == static_cast<int>(db.spaces.size()));
  CHECK_THROWS_AS(online_solve(mp2().disc, mp2().db, -1.0), std::invalid_argument);
}

TEST_CASE("newton variant names") {
  CHECK(parse_newton_variant("full") == NewtonVariant::Full);
  CHECK(parse_newton_variant(to_string(NewtonVariant::Precomputed)) == NewtonVariant::Precomputed);
  CHECK_THROWS_AS(parse_newton_variant("exact"), std::invalid_argument);
}

TEST_CASE("fine Newton reference solves the discrete Richards problem") {
  const Discretization& disc = mp2().disc;
  const FineNewtonResult ref = fine_newton_reference(disc, 0.0, 1e-10);
  CHECK(ref.trace.size() <= 10);
  const Mesh& fine = disc.hier.fine;
  const SparseMatrix a = assemble_stiffness(fine, richards_field(disc, ref.solution, false));
  const Vector load = assemble_load(fine, [](const Point&) { return 1.0; });
  const Vector r = load - a * ref.solution;
  double interior = 0.0;
  for (int v : fine.interior_nodes) interior = std::max(interior, std::abs(r[v]));
  CHECK(interior <= 1e-8 * load.cwiseAbs().maxCoeff());
  CHECK_THROWS_AS(fine_newton_reference(mp1().disc, 0.0, 1e-8), std::invalid_argument);
}

TEST_CASE("richards field derivative against central differences") {
  const Discretization& disc = mp2().disc;
  const Vector p = Vector::Constant(disc.hier.fine.node_count(), -0.5);
  const double d = 1e-7 * 0.5;
  const ElementField plus = richards_field(disc, Vector(p.array() + d), false);
  const ElementField minus = richards_field(disc, Vector(p.array() - d), false);
  const ElementField deriv = richards_field(disc, p, true);
  for (std::size_t e = 0; e < deriv.size(); e += 7) {
    CHECK(((plus[e] - minus[e]) / (2 * d) - deriv[e]).norm() <= 1e-6 * (1.0 + deriv[e].norm()));
  }
}

TEST_CASE("RB Newton converges and both variants agree") {
  const auto& [disc, db] = mp2();
  const NewtonResult full = newton_richards(disc, db, 0.0, 1e-5, 15, NewtonVariant::Full);
  const NewtonResult pre = newton_richards(disc, db, 0.0, 1e-5, 15, NewtonVariant::Precomputed);
  CHECK(full.trace.back().update_norm <= 1e-5);
  CHECK(pre.trace.back().update_norm <= 1e-5);
  const Vector& a = full.solution.fine;
  CHECK((a - pre.solution.fine).norm() <= 1e-3 * a.norm());

  const NewtonResult mid =
      newton_richards(disc, db, disc.problem.parameter_domain.midpoint(), 1e-5, 15, NewtonVariant::Full);
  CHECK(mid.trace.size() <= 15);

  const FineNewtonResult ref = fine_newton_reference(disc, 0.0, 1e-5);
  CHECK(relative_error(disc.hier.fine, a - ref.solution, ref.solution, NormKind::H1) < 0.5);
}

TEST_CASE("Newton with zero source stops at the zero field") {
  const auto& [disc, db] = mp2();
  Discretization zero = disc;
  zero.problem.source = [](const Point&, double) { return 0.0; };
  const NewtonResult r = newton_richards(zero, db, 0.0, 1e-5, 5, NewtonVariant::Full);
  CHECK(r.trace.size() == 1);
  CHECK(r.solution.fine.norm() == 0.0);
}

TEST_CASE("Newton reports non-convergence with its trace") {
  const auto& [disc, db] = mp2();
  try {
    newton_richards(disc, db, 0.0, 1e-300, 2, NewtonVariant::Full);
    FAIL("expected non-convergence");
  } catch (const NonConvergenceError& e) {
    CHECK(e.trace().size() == 2);
  }
  CHECK_THROWS_AS(newton_richards(mp1().disc, mp1().db, 1.0, 1e-5, 5, NewtonVariant::Full), std::invalid_argument);
}
