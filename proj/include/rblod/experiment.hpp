#pragma once

#include "rblod/rbonline.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace rblod {

enum class TableFormat { Csv, Markdown };

struct ExperimentConfig {
  std::string problem = "mp1";
  int n_coarse = 8;
  int fine_levels = 4;
  int k = 2;
  double tol = 0.1;
  std::uint64_t seed = 1;
  int train_size = 100;
  int j_max = 50;
  std::optional<double> mu;   // online parameter
  std::optional<double> mu1;  // first greedy parameter
  AlphaMode alpha_mode = AlphaMode::Local;
  std::filesystem::path db;   // offline database directory
  std::filesystem::path out;  // output directory
  NewtonVariant variant = NewtonVariant::Full;
  bool compare_variants = false;
  int threads = 1;
  double newton_tol = 1e-5;
  int max_iter = 30;
  std::optional<double> p0;  // initial Newton value, midpoint of D when unset
  // Convergence studies: rows (n_coarse, k) on a fixed fine grid of fine_n cells per side.
  std::vector<std::pair<int, int>> rows;
  int fine_n = 0;  // 0: n_coarse * 2^fine_levels
  std::map<std::string, std::string> overrides;  // problem overrides (epsilon, mu_lower, soil1, ...)

  void validate() const;
  ProblemDefinition make_problem() const;
  OfflineConfig offline_config() const;
};

// Defaults of the two model problems: mp1 h = 2^-7, TOL 0.1; mp2 h = 2^-6, TOL 0.01.
ExperimentConfig default_config(const std::string& problem);

// k(H) = floor(|ln H| + shift), shift 1 for mp1 and 0.5 for mp2.
int coupled_k(double h_coarse, double shift);
// Levels needed to reach fine_n cells per side from n_coarse; throws if not a power-of-two ratio.
int levels_for(int n_coarse, int fine_n);

struct ErrorRow {
  double H = 0.0;
  int k = 0;
  double coarse_l2 = 0.0;
  double l2 = 0.0;
  double h1 = 0.0;
  double t_off_local_avg = 0.0;
  double t_on_local_avg = 0.0;
  double t_on_global_avg = 0.0;
};

struct ErrorReport {
  std::vector<ErrorRow> rows;
  // Average EOC per error column (coarse-L2, L2, H1); empty with fewer than 2 rows,
  // nullopt when a row has a zero error.
  std::vector<std::optional<double>> eoc;
  std::vector<std::string> notes;
};

// Mean of log(e_i / e_{i+1}) / log(H_i / H_{i+1}) over successive rows.
std::vector<std::optional<double>> compute_eoc(const std::vector<ErrorRow>& rows);

using Log = std::function<void(const std::string&)>;

OfflineDB cmd_offline(const ExperimentConfig& config, const Log& log = {});
ErrorReport cmd_online(const ExperimentConfig& config, const Log& log = {});
ErrorReport cmd_convergence(const ExperimentConfig& config, const Log& log = {});
ErrorReport cmd_richards(const ExperimentConfig& config, const Log& log = {});

void write_table(std::ostream& out, const ErrorReport& report, TableFormat format);
void emit_tables(const ErrorReport& report, const std::filesystem::path& dir, const std::string& name);
// Parses the rows of a CSV table written by write_table.
std::vector<ErrorRow> parse_csv_table(const std::string& text);

}  // namespace rblod
