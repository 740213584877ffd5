#include "rblod/rboffline.hpp"

#include "parallel.hpp"
#include "rblod/errors.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <mutex>
#include <sstream>
#include <stdexcept>

namespace rblod {

std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

TrainingSet generate_training_set(const ParameterDomain& domain, int size, std::uint64_t seed) {
  if (size < 1) throw std::invalid_argument("training set size must be at least 1");
  TrainingSet set;
  set.seed = seed;
  std::uint64_t state = seed;
  const double width = domain.upper - domain.lower;
  for (int i = 0; i < size; ++i) {
    const double u = static_cast<double>(splitmix64_next(state) >> 11) * 0x1.0p-53;
    set.parameters.push_back(domain.lower + width * u);
  }
  return set;
}

std::string to_string(AlphaMode mode) {
  switch (mode) {
    case AlphaMode::Global: return "global";
    case AlphaMode::Parameter: return "parameter";
    case AlphaMode::Local: return "local";
  }
  return "global";
}

AlphaMode parse_alpha_mode(const std::string& text) {
  if (text == "global") return AlphaMode::Global;
  if (text == "parameter") return AlphaMode::Parameter;
  if (text == "local") return AlphaMode::Local;
  throw std::invalid_argument("unknown alpha mode '" + text + "' (global, parameter, local)");
}

double OfflineTimings::local_average() const {
  double sum = 0.0;
  int count = 0;
  for (double s : element_seconds) {
    if (s > 0.0) {
      sum += s;
      ++count;
    }
  }
  return count ? sum / count : 0.0;
}

const LocalRBSpace& OfflineDB::space_of_node(int z) const {
  for (const auto& s : spaces) {
    if (s.node == z) return s;
  }
  throw std::invalid_argument("node has no local reduced space");
}

double local_alpha(const Discretization& disc, double mu, std::span<const int> elements) {
  const auto theta = disc.problem.coefficient.thetas(mu);
  double alpha = std::numeric_limits<double>::infinity();
  auto visit = [&](int e) {
    Matrix2 a = Matrix2::Zero();
    for (int q = 0; q < disc.q_count(); ++q) a += theta[q] * disc.terms[q][e];
    alpha = std::min(alpha, min_eigenvalue(a));
  };
  if (elements.empty()) {
    for (int e = 0; e < disc.hier.fine.element_count(); ++e) visit(e);
  } else {
    for (int e : elements) visit(e);
  }
  if (!(alpha > 0.0)) {
    throw CoefficientNotCoerciveError(std::nan(""), std::nan(""), mu, alpha);
  }
  return alpha;
}

double estimator_alpha(const OfflineDB& db, const Discretization& disc, const LocalRBSpace& space, double mu) {
  switch (db.manifest.alpha_mode) {
    case AlphaMode::Global: return db.manifest.alpha;
    case AlphaMode::Parameter: return local_alpha(disc, mu);
    case AlphaMode::Local: {
      if (!space.region_elements.empty()) return local_alpha(disc, mu, space.region_elements);
      const Patch region = node_patch_union(disc.hier, space.node, db.manifest.k);
      return local_alpha(disc, mu, region.fine_elements);
    }
  }
  return db.manifest.alpha;
}

Vector riesz_weights(std::span<const double> theta, const Vector& c) {
  const int nq = static_cast<int>(theta.size());
  Vector w(nq * (1 + c.size()));
  for (int q = 0; q < nq; ++q) w[q] = theta[q];
  for (int i = 0; i < c.size(); ++i) {
    for (int q = 0; q < nq; ++q) w[nq + i * nq + q] = theta[q] * c[i];
  }
  return w;
}

Vector rb_local_solve_perK(const ElementPiece& piece, std::span<const double> theta) {
  if (piece.rank == 0) return Vector();
  DenseMatrix a = DenseMatrix::Zero(piece.rank, piece.rank);
  Vector b = Vector::Zero(piece.rank);
  for (std::size_t q = 0; q < piece.matrix.size(); ++q) {
    a += theta[q] * piece.matrix[q];
    b += theta[q] * piece.load[q];
  }
  Eigen::LDLT<DenseMatrix> ldlt(a);
  const Vector d = ldlt.vectorD();
  if (ldlt.info() != Eigen::Success || !(d.minCoeff() > 1e-13 * d.cwiseAbs().maxCoeff())) {
    throw IllConditionedBasisError("reduced element matrix is singular or indefinite");
  }
  return ldlt.solve(b);
}

EstimatorValue residual_estimator(const LocalRBSpace& space, std::span<const double> theta,
                                  const std::vector<Vector>& coefficients, double alpha) {
  if (coefficients.size() != space.pieces.size()) {
    throw InconsistentDatabaseError("estimator needs one coefficient vector per element piece");
  }
  double sum = 0.0;
  for (std::size_t p = 0; p < space.pieces.size(); ++p) {
    const auto& piece = space.pieces[p];
    if (piece.riesz_factor.cols() != piece.riesz_columns() || coefficients[p].size() != piece.rank) {
      throw InconsistentDatabaseError("Riesz pieces missing for element " + std::to_string(piece.element));
    }
    sum += (piece.riesz_factor * riesz_weights(theta, coefficients[p])).norm();
  }
  EstimatorValue value;
  value.residual_sum = sum;
  value.absolute = std::sqrt(space.c_z) / alpha * sum;
  value.sqrt_variant = std::sqrt(space.c_z / alpha) * sum;
  value.relative = value.absolute / space.hat_energy;
  return value;
}

EstimatorValue estimate(const LocalRBSpace& space, std::span<const double> theta, double alpha) {
  std::vector<Vector> c;
  c.reserve(space.pieces.size());
  for (const auto& piece : space.pieces) c.push_back(rb_local_solve_perK(piece, theta));
  return residual_estimator(space, theta, c, alpha);
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double energy(const SparseMatrix& a, const Vector& v) { return std::sqrt(std::max(0.0, v.dot(a * v))); }

// Rank-revealing Gram-Schmidt in the inner product of `gram`, recording the
// coefficients of every appended column: columns = U R.
class OrthoFactor {
 public:
  explicit OrthoFactor(const SparseMatrix* gram) : gram_(gram) {}

  void append(const Vector& b) {
    const int r = static_cast<int>(u_.cols());
    const double norm_b = energy(*gram_, b);
    Vector coeff = Vector::Zero(r);
    Vector v = b;
    if (r > 0) {
      for (int pass = 0; pass < 2; ++pass) {
        const Vector c = u_.transpose() * (*gram_ * v);
        v.noalias() -= u_ * c;
        coeff += c;
      }
    }
    const double rho = energy(*gram_, v);
    const bool grow = norm_b > 0.0 && rho > 1e-12 * norm_b;
    const int rows = grow ? r + 1 : r;
    DenseMatrix next = DenseMatrix::Zero(rows, columns_ + 1);
    next.topLeftCorner(r, columns_) = r_;
    next.col(columns_).head(r) = coeff;
    if (grow) {
      next(r, columns_) = rho;
      u_.conservativeResize(v.size(), r + 1);
      u_.col(r) = v / rho;
    } else if (u_.rows() == 0) {
      u_.resize(v.size(), 0);
    }
    r_ = std::move(next);
    ++columns_;
  }

  const DenseMatrix& factor() const { return r_; }

 private:
  const SparseMatrix* gram_;
  DenseMatrix u_;
  DenseMatrix r_;
  int columns_ = 0;
};

struct PieceWork {
  int element = -1;
  PatchSpace space;
  std::unique_ptr<ConstrainedSolver> riesz_solver;
  DenseMatrix coupling;          // dofs x Q
  std::vector<int> position;     // dof -> index in the node support
  DenseMatrix basis;             // dofs x rank, Laplacian-orthonormal
  std::vector<DenseMatrix> matrix;
  std::vector<Vector> load;
  std::unique_ptr<OrthoFactor> riesz;
  DenseMatrix raw_riesz;
  double seconds = 0.0;
};

}  // namespace

OfflineBuilder::OfflineBuilder(const Discretization& disc, OfflineConfig config)
    : disc_(disc), config_(config) {
  if (config_.k < 0) throw std::invalid_argument("patch order must be nonnegative");
  if (!(config_.tol > 0.0)) throw std::invalid_argument("greedy tolerance must be positive");
  if (config_.j_max < 1) throw std::invalid_argument("maximum dimension must be positive");
  training_ = generate_training_set(disc_.problem.parameter_domain, config_.train_size, config_.seed);
  mu1_ = config_.mu1.value_or(training_.parameters.front());
  global_alpha_ = coercivity_lower_bound(disc_.problem.coefficient, training_.parameters, disc_.hier.fine);
  if (config_.alpha_mode == AlphaMode::Parameter) {
    for (double mu : training_.parameters) parameter_alpha_.push_back(local_alpha(disc_, mu));
  }
}

LocalRBSpace OfflineBuilder::greedy_node(int z) const {
  const auto& coeff = disc_.problem.coefficient;
  const int nq = disc_.q_count();
  const auto support_elements = node_support(disc_.hier.coarse, z);

  LocalRBSpace result;
  result.node = z;
  result.c_z = static_cast<double>(support_elements.size());
  const Patch region = node_patch_union(disc_.hier, z, config_.k);
  result.support = region.fine_closure_nodes;
  result.region_elements = region.fine_elements;
  const auto& support = result.support;
  const SparseMatrix node_laplacian = extract_block(disc_.laplacian, support, support);
  {
    const Vector hat = disc_.fine_hat(z);
    result.hat_energy = energy(disc_.laplacian, hat);
  }

  std::vector<PieceWork> work(support_elements.size());
  for (std::size_t p = 0; p < work.size(); ++p) {
    const auto start = Clock::now();
    auto& w = work[p];
    w.element = support_elements[p];
    w.space = make_patch_space(disc_, element_patch(disc_.hier, w.element, config_.k));
    w.riesz_solver = std::make_unique<ConstrainedSolver>(w.space.laplacian, w.space.constraint);
    w.coupling.resize(w.space.size(), nq);
    for (int q = 0; q < nq; ++q) w.coupling.col(q) = element_coupling(disc_, w.space, w.element, z, q);
    w.position.resize(w.space.dofs.size());
    for (std::size_t i = 0; i < w.space.dofs.size(); ++i) w.position[i] = sorted_index(support, w.space.dofs[i]);
    w.basis.resize(w.space.size(), 0);
    w.matrix.assign(nq, DenseMatrix(0, 0));
    w.load.assign(nq, Vector(0));
    w.riesz = std::make_unique<OrthoFactor>(&w.space.laplacian);
    const DenseMatrix l = w.riesz_solver->solve(w.coupling);
    for (int q = 0; q < nq; ++q) w.riesz->append(l.col(q));
    if (config_.keep_fine_pieces) w.raw_riesz = l;
    w.seconds += seconds_since(start);
  }

  DenseMatrix node_basis(support.size(), 0);

  // Exact element correctors at mu, one per element of the node support.
  auto snapshots = [&](double mu) {
    const auto theta = coeff.thetas(mu);
    std::vector<Vector> pieces(work.size());
    for (std::size_t p = 0; p < work.size(); ++p) {
      const auto start = Clock::now();
      auto& w = work[p];
      const ConstrainedSolver solver(w.space.matrix(theta), w.space.constraint);
      pieces[p] = solver.solve(Vector(-(w.coupling * Eigen::Map<const Vector>(theta.data(), nq))));
      w.seconds += seconds_since(start);
    }
    return pieces;
  };

  auto add_direction = [&](PieceWork& w, const Vector& e) {
    const int r = static_cast<int>(w.basis.cols());
    w.basis.conservativeResize(Eigen::NoChange, r + 1);
    w.basis.col(r) = e;
    DenseMatrix h(w.space.size(), nq);
    for (int q = 0; q < nq; ++q) {
      const Vector ae = w.space.stiffness[q] * e;
      const Vector column = w.basis.transpose() * ae;
      DenseMatrix grown = DenseMatrix::Zero(r + 1, r + 1);
      grown.topLeftCorner(r, r) = w.matrix[q];
      grown.col(r) = column;
      grown.row(r) = column.transpose();
      w.matrix[q] = std::move(grown);
      w.load[q].conservativeResize(r + 1);
      w.load[q][r] = -w.coupling.col(q).dot(e);
      h.col(q) = ae;
    }
    const DenseMatrix hp = w.riesz_solver->solve(h);
    for (int q = 0; q < nq; ++q) w.riesz->append(hp.col(q));
    if (config_.keep_fine_pieces) {
      w.raw_riesz.conservativeResize(Eigen::NoChange, w.raw_riesz.cols() + nq);
      w.raw_riesz.rightCols(nq) = hp;
    }
  };

  // Returns false when the summed snapshot is numerically dependent.
  auto add_snapshot = [&](double mu) {
    const std::vector<Vector> pieces = snapshots(mu);
    Vector v = Vector::Zero(support.size());
    for (std::size_t p = 0; p < work.size(); ++p) {
      for (std::size_t i = 0; i < work[p].position.size(); ++i) v[work[p].position[i]] += pieces[p][i];
    }
    const double original = energy(node_laplacian, v);
    const int j = static_cast<int>(node_basis.cols());
    for (int pass = 0; pass < 2 && j > 0; ++pass) {
      const Vector c = node_basis.transpose() * (node_laplacian * v);
      v.noalias() -= node_basis * c;
    }
    const double rho = energy(node_laplacian, v);
    if (!(original > 0.0) || rho < 1e-10 * original) return false;
    node_basis.conservativeResize(Eigen::NoChange, j + 1);
    node_basis.col(j) = v / rho;
    result.parameters.push_back(mu);

    for (std::size_t p = 0; p < work.size(); ++p) {
      const auto start = Clock::now();
      auto& w = work[p];
      Vector s = pieces[p];
      const double norm_s = energy(w.space.laplacian, s);
      for (int pass = 0; pass < 2 && w.basis.cols() > 0; ++pass) {
        const Vector c = w.basis.transpose() * (w.space.laplacian * s);
        s.noalias() -= w.basis * c;
      }
      const double rho_s = energy(w.space.laplacian, s);
      if (norm_s > 0.0 && rho_s > 1e-10 * norm_s) add_direction(w, s / rho_s);
      w.seconds += seconds_since(start);
    }
    return true;
  };

  auto snapshot_space = [&]() {
    result.pieces.clear();
    for (auto& w : work) {
      ElementPiece piece;
      piece.element = w.element;
      piece.rank = static_cast<int>(w.basis.cols());
      piece.matrix = w.matrix;
      piece.load = w.load;
      piece.riesz_factor = w.riesz->factor();
      result.pieces.push_back(std::move(piece));
    }
  };

  auto alpha_at = [&](int index) {
    switch (config_.alpha_mode) {
      case AlphaMode::Global: return global_alpha_;
      case AlphaMode::Parameter: return parameter_alpha_[index];
      case AlphaMode::Local: return local_alpha(disc_, training_.parameters[index], result.region_elements);
    }
    return global_alpha_;
  };

  const auto& train = training_.parameters;
  std::vector<double> alpha(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) alpha[i] = alpha_at(static_cast<int>(i));

  std::vector<std::uint8_t> candidate(train.size(), 1);
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i] == mu1_) candidate[i] = 0;
  }
  if (!add_snapshot(mu1_)) ++result.rejected;
  double last_added = mu1_;
  bool space_changed = true;

  while (true) {
    snapshot_space();
    double best = -1.0;
    int best_index = -1;
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (!candidate[i]) continue;
      const double value = estimate(result, coeff.thetas(train[i]), alpha[i]).relative;
      if (value > best) {
        best = value;
        best_index = static_cast<int>(i);
      }
    }
    const double recorded = std::max(best, 0.0);
    if (space_changed) {
      result.history.push_back({last_added, recorded});
    } else if (!result.history.empty()) {
      result.history.back().max_estimate = recorded;
    }
    if (best_index < 0) break;  // training set exhausted
    if (best <= config_.tol) {
      result.converged = true;
      break;
    }
    if (result.dimension() >= config_.j_max) break;
    candidate[best_index] = 0;
    space_changed = add_snapshot(train[best_index]);
    if (space_changed) {
      last_added = train[best_index];
    } else {
      ++result.rejected;
    }
  }

  result.basis = std::move(node_basis);
  for (std::size_t p = 0; p < work.size(); ++p) {
    result.piece_seconds.push_back(work[p].seconds);
    if (config_.keep_fine_pieces) {
      result.pieces[p].dofs = work[p].space.dofs;
      result.pieces[p].basis = work[p].basis;
      result.pieces[p].riesz = work[p].raw_riesz;
    }
  }
  return result;
}

void OfflineBuilder::precompute_local(LocalRBSpace& space) const {
  const auto& support = space.support;
  Vector hat(support.size());
  for (std::size_t i = 0; i < support.size(); ++i) {
    hat[i] = disc_.embedding.coeff(support[i], space.node);
  }
  space.D.clear();
  space.F.clear();
  for (int q = 0; q < disc_.q_count(); ++q) {
    const SparseMatrix a = extract_block(disc_.stiffness[q], support, support);
    const DenseMatrix y = a * space.basis;
    DenseMatrix d = space.basis.transpose() * y;
    space.D.push_back(0.5 * (d + d.transpose()));
    space.F.push_back(y.transpose() * hat);
  }
}

std::vector<NodePair> OfflineBuilder::precompute_global(const std::vector<LocalRBSpace>& spaces) const {
  const int count = static_cast<int>(spaces.size());
  const int nq = disc_.q_count();
  const auto& coarse = disc_.hier.coarse;

  // Nodes whose region contains each coarse element.
  std::vector<std::vector<int>> element_nodes(coarse.element_count());
  for (int n = 0; n < count; ++n) {
    std::vector<int> elements;
    for (int e : node_support(coarse, spaces[n].node)) {
      for (int t : grow_elements(coarse, {e}, config_.k)) elements.push_back(t);
    }
    std::sort(elements.begin(), elements.end());
    elements.erase(std::unique(elements.begin(), elements.end()), elements.end());
    for (int e : elements) element_nodes[e].push_back(n);
  }

  // [Phi | xi] on each node support.
  std::vector<DenseMatrix> x(count);
  for (int n = 0; n < count; ++n) {
    const auto& s = spaces[n];
    x[n].resize(s.support.size(), 1 + s.dimension());
    for (std::size_t i = 0; i < s.support.size(); ++i) x[n](i, 0) = disc_.embedding.coeff(s.support[i], s.node);
    x[n].rightCols(s.dimension()) = s.basis;
  }

  std::vector<std::vector<NodePair>> per_m(count);
  detail::parallel_for(count, config_.threads, [&](int m) {
    std::vector<int> partners;
    std::vector<std::uint8_t> seen(count, 0);
    for (int e = 0; e < coarse.element_count(); ++e) {
      const auto& nodes = element_nodes[e];
      if (!std::binary_search(nodes.begin(), nodes.end(), m)) continue;
      for (int n : nodes) {
        if (n <= m && !seen[n]) {
          seen[n] = 1;
          partners.push_back(n);
        }
      }
    }
    std::sort(partners.begin(), partners.end());
    const auto& sm = spaces[m].support;
    std::vector<DenseMatrix> y(nq);
    for (int q = 0; q < nq; ++q) y[q] = extract_block(disc_.stiffness[q], sm, sm) * x[m];
    for (int n : partners) {
      const auto& sn = spaces[n].support;
      std::vector<int> pn, pm;
      std::size_t i = 0, j = 0;
      while (i < sn.size() && j < sm.size()) {
        if (sn[i] < sm[j]) {
          ++i;
        } else if (sm[j] < sn[i]) {
          ++j;
        } else {
          pn.push_back(static_cast<int>(i++));
          pm.push_back(static_cast<int>(j++));
        }
      }
      DenseMatrix xn(pn.size(), x[n].cols());
      for (std::size_t r = 0; r < pn.size(); ++r) xn.row(r) = x[n].row(pn[r]);
      NodePair pair;
      pair.n = n;
      pair.m = m;
      const int jn = spaces[n].dimension();
      const int jm = spaces[m].dimension();
      for (int q = 0; q < nq; ++q) {
        DenseMatrix ym(pm.size(), y[q].cols());
        for (std::size_t r = 0; r < pm.size(); ++r) ym.row(r) = y[q].row(pm[r]);
        const DenseMatrix g = xn.transpose() * ym;
        pair.s.push_back(g(0, 0));
        pair.r_nm.push_back(g.row(0).tail(jm).transpose());
        pair.r_mn.push_back(g.col(0).tail(jn));
        DenseMatrix block = g.bottomRightCorner(jn, jm);
        if (n == m) {
          block = 0.5 * (block + block.transpose()).eval();
          pair.r_mn.back() = pair.r_nm.back();
        }
        pair.M.push_back(std::move(block));
      }
      per_m[m].push_back(std::move(pair));
    }
  });

  std::vector<NodePair> pairs;
  for (auto& list : per_m) {
    for (auto& p : list) pairs.push_back(std::move(p));
  }
  std::sort(pairs.begin(), pairs.end(), [](const NodePair& a, const NodePair& b) {
    return a.n != b.n ? a.n < b.n : a.m < b.m;
  });
  return pairs;
}

OfflineDB OfflineBuilder::run(const std::function<void(const std::string&)>& log) const {
  const auto start = Clock::now();
  const auto& interior = disc_.coarse_interior();
  OfflineDB db;
  db.training = training_.parameters;
  db.spaces.resize(interior.size());
  std::atomic<int> finished{0};
  std::mutex log_mutex;
  detail::parallel_for(static_cast<int>(interior.size()), config_.threads, [&](int i) {
    LocalRBSpace space = greedy_node(interior[i]);
    precompute_local(space);
    db.spaces[i] = std::move(space);
    const int done = ++finished;
    if (log) {
      std::lock_guard lock(log_mutex);
      std::ostringstream os;
      os << "node " << interior[i] << " (" << done << "/" << interior.size() << "): J=" << db.spaces[i].dimension()
         << (db.spaces[i].converged ? "" : " [not converged]");
      log(os.str());
    }
  });
  db.pairs = precompute_global(db.spaces);

  auto& m = db.manifest;
  m.problem_id = disc_.problem.id;
  m.n_coarse = static_cast<int>(std::lround(std::sqrt(static_cast<double>(disc_.hier.coarse.element_count()) / 2.0)));
  m.levels = disc_.hier.refinement_levels;
  m.k = config_.k;
  m.seed = config_.seed;
  m.tol = config_.tol;
  m.train_size = config_.train_size;
  m.j_max = config_.j_max;
  m.mu1 = mu1_;
  m.alpha_mode = config_.alpha_mode;
  m.alpha = global_alpha_;
  m.q_count = disc_.q_count();
  m.node_count = static_cast<int>(db.spaces.size());
  m.epsilon = disc_.problem.epsilon;
  m.mu_lower = disc_.problem.parameter_domain.lower;
  m.mu_upper = disc_.problem.parameter_domain.upper;

  db.timings.element_seconds.assign(disc_.hier.coarse.element_count(), 0.0);
  for (const auto& s : db.spaces) {
    for (std::size_t p = 0; p < s.pieces.size() && p < s.piece_seconds.size(); ++p) {
      db.timings.element_seconds[s.pieces[p].element] += s.piece_seconds[p];
    }
  }
  db.timings.total_seconds = seconds_since(start);
  return db;
}

void check_compatible(const OfflineDB& db, const std::string& problem_id, int n_coarse, int levels, int k) {
  const auto& m = db.manifest;
  std::ostringstream os;
  if (m.problem_id != problem_id) os << " problem " << m.problem_id << " != " << problem_id << ";";
  if (m.n_coarse != n_coarse) os << " n_coarse " << m.n_coarse << " != " << n_coarse << ";";
  if (m.levels != levels) os << " levels " << m.levels << " != " << levels << ";";
  if (m.k != k) os << " k " << m.k << " != " << k << ";";
  if (!os.str().empty()) throw IncompatibleDatabaseError("offline database does not match:" + os.str());
}

}  // namespace rblod
