#pragma once

#include "rblod/coeffs.hpp"
#include "rblod/femcore.hpp"
#include "rblod/lod.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rblod {

struct TrainingSet {
  std::vector<double> parameters;
  std::uint64_t seed = 0;
  std::string generator_id = "splitmix64-53";
};

std::uint64_t splitmix64_next(std::uint64_t& state);
TrainingSet generate_training_set(const ParameterDomain& domain, int size, std::uint64_t seed);

// How the coercivity constant in the estimator is chosen.
//   global:    one bound over the whole mesh and the training set
//   parameter: bound over the whole mesh at the evaluated parameter
//   local:     bound over the node region at the evaluated parameter
enum class AlphaMode { Global, Parameter, Local };

std::string to_string(AlphaMode mode);
AlphaMode parse_alpha_mode(const std::string& text);

struct OfflineConfig {
  int n_coarse = 8;
  int levels = 4;
  int k = 2;
  double tol = 0.1;
  std::uint64_t seed = 1;
  int train_size = 100;
  int j_max = 50;
  std::optional<double> mu1;
  AlphaMode alpha_mode = AlphaMode::Local;
  int threads = 1;
  // Keep per-element snapshot and Riesz fine vectors in memory (tests only).
  bool keep_fine_pieces = false;
};

// Reduced data of one element K of the node support. The element space is
// kept in Laplacian-orthonormal coordinates E; its span equals the span of
// the element pieces of the node snapshots.
struct ElementPiece {
  int element = -1;
  int rank = 0;
  std::vector<DenseMatrix> matrix;  // per q: (grad E_i, a_q grad E_j) on the patch
  std::vector<Vector> load;         // per q: -(int_K a_q grad Phi_z . grad E_j)
  // Upper-trapezoidal factor R of the Riesz pieces [l_q | h_{q,i}] in
  // an orthonormal basis, so that |grad r| = |R w|.
  DenseMatrix riesz_factor;

  // Present only with keep_fine_pieces.
  std::vector<int> dofs;
  DenseMatrix basis;  // dofs x rank
  DenseMatrix riesz;  // dofs x columns, raw l and h pieces

  int riesz_columns() const { return static_cast<int>(matrix.size()) * (1 + rank); }
};

struct GreedyRound {
  double parameter = 0.0;
  double max_estimate = 0.0;  // relative, over the remaining candidates
};

struct LocalRBSpace {
  int node = -1;  // coarse node index
  std::vector<double> parameters;
  std::vector<ElementPiece> pieces;
  std::vector<GreedyRound> history;
  bool converged = false;
  int rejected = 0;
  std::vector<int> support;  // fine nodes of the closure of the node region
  DenseMatrix basis;         // support x J, orthonormal summed snapshots
  std::vector<DenseMatrix> D;
  std::vector<Vector> F;
  double c_z = 0.0;
  double hat_energy = 0.0;  // |grad Phi_z| over its support
  std::vector<int> region_elements;  // fine elements of the node region
  std::vector<double> piece_seconds;  // offline time per element piece, not persisted

  int dimension() const { return static_cast<int>(parameters.size()); }
};

struct NodePair {
  int n = -1;  // interior indices, n <= m
  int m = -1;
  std::vector<double> s;          // per q: (a_q grad Phi_m, grad Phi_n)
  std::vector<Vector> r_nm;       // per q, J_m: (a_q grad xi^m_j, grad Phi_n)
  std::vector<Vector> r_mn;       // per q, J_n: (a_q grad xi^n_i, grad Phi_m)
  std::vector<DenseMatrix> M;     // per q, J_n x J_m: (a_q grad xi^m_j, grad xi^n_i)
};

struct OfflineManifest {
  std::string problem_id;
  int n_coarse = 0;
  int levels = 0;
  int k = 0;
  std::uint64_t seed = 0;
  double tol = 0.0;
  int train_size = 0;
  int j_max = 0;
  double mu1 = 0.0;
  AlphaMode alpha_mode = AlphaMode::Global;
  double alpha = 0.0;
  int q_count = 0;
  int node_count = 0;
  double epsilon = 0.0;
  double mu_lower = 0.0;
  double mu_upper = 0.0;
};

struct OfflineTimings {
  double total_seconds = 0.0;
  std::vector<double> element_seconds;  // per coarse element
  double local_average() const;
};

struct OfflineDB {
  OfflineManifest manifest;
  std::vector<double> training;
  std::vector<LocalRBSpace> spaces;  // one per interior coarse node, in order
  std::vector<NodePair> pairs;
  OfflineTimings timings;  // not persisted

  const LocalRBSpace& space_of_node(int z) const;
};

// Offline machinery bound to one discretization.
class OfflineBuilder {
 public:
  OfflineBuilder(const Discretization& disc, OfflineConfig config);

  const TrainingSet& training() const { return training_; }
  double mu1() const { return mu1_; }
  double global_alpha() const { return global_alpha_; }

  // Initialization and greedy loop for one interior coarse node.
  LocalRBSpace greedy_node(int z) const;
  // Galerkin matrices of the node-level online problem.
  void precompute_local(LocalRBSpace& space) const;
  std::vector<NodePair> precompute_global(const std::vector<LocalRBSpace>& spaces) const;

  OfflineDB run(const std::function<void(const std::string&)>& log = {}) const;

 private:
  const Discretization& disc_;
  OfflineConfig config_;
  TrainingSet training_;
  double mu1_ = 0.0;
  double global_alpha_ = 0.0;
  std::vector<double> parameter_alpha_;  // per training parameter, parameter mode
};

// Smallest eigenvalue of a(x; mu) over the given fine elements (all when empty).
double local_alpha(const Discretization& disc, double mu, std::span<const int> elements = {});

// Coercivity constant used by the estimator for the node at parameter mu.
double estimator_alpha(const OfflineDB& db, const Discretization& disc, const LocalRBSpace& space, double mu);

// Per-element reduced Galerkin solve in the element space coordinates.
Vector rb_local_solve_perK(const ElementPiece& piece, std::span<const double> theta);

struct EstimatorValue {
  double absolute = 0.0;       // sqrt(C_z)/alpha * sum_K |grad r^K|
  double relative = 0.0;       // absolute / |grad Phi_z|
  double sqrt_variant = 0.0;   // sqrt(C_z/alpha) * sum_K |grad r^K|
  double residual_sum = 0.0;   // sum_K |grad r^K|
};

EstimatorValue residual_estimator(const LocalRBSpace& space, std::span<const double> theta,
                                  const std::vector<Vector>& coefficients, double alpha);
// Convenience: per-element solves followed by the estimator.
EstimatorValue estimate(const LocalRBSpace& space, std::span<const double> theta, double alpha);

// Riesz coefficient vector w = [theta_q | theta_q c_i].
Vector riesz_weights(std::span<const double> theta, const Vector& c);

void save_offline(const OfflineDB& db, const std::filesystem::path& path);
OfflineDB load_offline(const std::filesystem::path& path);
// Throws IncompatibleDatabaseError when the db was built for other data.
void check_compatible(const OfflineDB& db, const std::string& problem_id, int n_coarse, int levels, int k);

}  // namespace rblod
