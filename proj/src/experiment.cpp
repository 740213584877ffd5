#include "rblod/experiment.hpp"

#include "rblod/array_io.hpp"
#include "rblod/errors.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace rblod {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void say(const Log& log, const std::string& text) {
  if (log) log(text);
}

constexpr double kMp1OnlineMu = 2.012;

double online_parameter(const ExperimentConfig& config, const ProblemDefinition& problem) {
  if (config.mu) return *config.mu;
  return problem.id == "mp1" ? kMp1OnlineMu : problem.parameter_domain.midpoint();
}

OfflineDB obtain_db(const ExperimentConfig& config, const Discretization& disc, const Log& log) {
  if (!config.db.empty() && fs::exists(config.db / "manifest.txt")) {
    OfflineDB db = load_offline(config.db);
    check_compatible(db, config.problem, config.n_coarse, config.fine_levels, config.k);
    db.timings.element_seconds.clear();
    db.timings.total_seconds = std::numeric_limits<double>::quiet_NaN();
    say(log, "loaded offline database " + config.db.string());
    return db;
  }
  OfflineBuilder builder(disc, config.offline_config());
  OfflineDB db = builder.run(log);
  if (!config.db.empty()) save_offline(db, config.db);
  return db;
}

double offline_local_average(const OfflineDB& db) {
  if (db.timings.element_seconds.empty()) return std::numeric_limits<double>::quiet_NaN();
  return db.timings.local_average();
}

void fill_errors(ErrorRow& row, const Mesh& fine, const Vector& coarse_part, const Vector& full,
                 const Vector& reference) {
  row.coarse_l2 = relative_error(fine, coarse_part - reference, reference, NormKind::L2);
  row.l2 = relative_error(fine, full - reference, reference, NormKind::L2);
  row.h1 = relative_error(fine, full - reference, reference, NormKind::H1);
}

void export_vector(const fs::path& path, const Vector& v) {
  write_array(path, Array{{static_cast<std::uint64_t>(v.size())}, {v.data(), v.data() + v.size()}});
}

void export_solution(const ExperimentConfig& config, const OnlineSolution& solution, const Vector& reference) {
  if (config.out.empty()) return;
  fs::create_directories(config.out);
  export_vector(config.out / "coarse.bin", solution.coarse);
  export_vector(config.out / "coarse_part.bin", solution.coarse_part);
  export_vector(config.out / "fine.bin", solution.fine);
  export_vector(config.out / "reference.bin", reference);
}

std::string format_value(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(5) << v;
  return os.str();
}

struct RichardsRun {
  ErrorRow row;
  NewtonResult result;
};

RichardsRun richards_row(const ExperimentConfig& config, const Discretization& disc, const OfflineDB& db,
                         const Vector& reference, NewtonVariant variant) {
  const double p0 = config.p0.value_or(disc.problem.parameter_domain.midpoint());
  const auto start = Clock::now();
  RichardsRun run;
  run.result = newton_richards(disc, db, p0, config.newton_tol, config.max_iter, variant);
  const double total = seconds_since(start);
  const auto& r = run.result;
  run.row.H = disc.problem.side / config.n_coarse;
  run.row.k = config.k;
  run.row.t_off_local_avg = offline_local_average(db);
  run.row.t_on_local_avg = r.local_solves ? r.local_seconds / r.local_solves : 0.0;
  run.row.t_on_global_avg = (total - r.local_seconds) / static_cast<double>(r.trace.size());
  fill_errors(run.row, disc.hier.fine, r.solution.coarse_part, r.solution.fine, reference);
  return run;
}

ErrorRow online_row(const ExperimentConfig& config, const Discretization& disc, const OfflineDB& db,
                    const Vector& reference, double mu, OnlineSolution* keep) {
  OnlineSolution solution = online_solve(disc, db, mu);
  ErrorRow row;
  row.H = disc.problem.side / config.n_coarse;
  row.k = config.k;
  row.t_off_local_avg = offline_local_average(db);
  row.t_on_local_avg = db.spaces.empty() ? 0.0 : solution.basis.local_seconds / db.spaces.size();
  row.t_on_global_avg = solution.global_seconds;
  fill_errors(row, disc.hier.fine, solution.coarse_part, solution.fine, reference);
  if (keep) *keep = std::move(solution);
  return row;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (problem != "mp1" && problem != "mp2") throw std::invalid_argument("problem must be mp1 or mp2");
  if (n_coarse < 1) throw std::invalid_argument("coarse-n must be positive");
  if (fine_levels < 0) throw std::invalid_argument("fine-levels must be nonnegative");
  if (k < 0) throw std::invalid_argument("k must be nonnegative");
  if (!(tol > 0.0)) throw std::invalid_argument("tol must be positive");
  if (train_size < 1) throw std::invalid_argument("train-size must be positive");
  if (j_max < 1) throw std::invalid_argument("j-max must be positive");
  if (threads < 1) throw std::invalid_argument("threads must be positive");
  if (!(newton_tol > 0.0)) throw std::invalid_argument("newton-tol must be positive");
  if (max_iter < 1) throw std::invalid_argument("max-iter must be positive");
}

ProblemDefinition ExperimentConfig::make_problem() const {
  return rblod::make_problem(problem, parse_problem_overrides(overrides));
}

OfflineConfig ExperimentConfig::offline_config() const {
  OfflineConfig c;
  c.n_coarse = n_coarse;
  c.levels = fine_levels;
  c.k = k;
  c.tol = tol;
  c.seed = seed;
  c.train_size = train_size;
  c.j_max = j_max;
  c.mu1 = mu1;
  c.alpha_mode = alpha_mode;
  c.threads = threads;
  return c;
}

ExperimentConfig default_config(const std::string& problem) {
  ExperimentConfig c;
  c.problem = problem;
  if (problem == "mp2") {
    c.fine_levels = 3;
    c.tol = 0.01;
  }
  return c;
}

int coupled_k(double h_coarse, double shift) {
  if (!(h_coarse > 0.0)) throw std::invalid_argument("H must be positive");
  return static_cast<int>(std::floor(std::abs(std::log(h_coarse)) + shift));
}

int levels_for(int n_coarse, int fine_n) {
  if (n_coarse < 1 || fine_n < n_coarse || fine_n % n_coarse != 0) {
    throw std::invalid_argument("fine resolution must be a multiple of the coarse one");
  }
  int ratio = fine_n / n_coarse;
  int levels = 0;
  while (ratio > 1) {
    if (ratio % 2 != 0) throw std::invalid_argument("fine/coarse ratio must be a power of two");
    ratio /= 2;
    ++levels;
  }
  return levels;
}

std::vector<std::optional<double>> compute_eoc(const std::vector<ErrorRow>& rows) {
  if (rows.size() < 2) return {};
  std::vector<std::optional<double>> eoc;
  const auto column = [&](auto member) -> std::optional<double> {
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
      const double a = rows[i].*member;
      const double b = rows[i + 1].*member;
      if (!(a > 0.0) || !(b > 0.0)) return std::nullopt;
      sum += std::log(a / b) / std::log(rows[i].H / rows[i + 1].H);
    }
    return sum / static_cast<double>(rows.size() - 1);
  };
  eoc.push_back(column(&ErrorRow::coarse_l2));
  eoc.push_back(column(&ErrorRow::l2));
  eoc.push_back(column(&ErrorRow::h1));
  return eoc;
}

OfflineDB cmd_offline(const ExperimentConfig& config, const Log& log) {
  config.validate();
  const ProblemDefinition problem = config.make_problem();
  const Discretization disc = make_discretization(problem, config.n_coarse, config.fine_levels);
  OfflineBuilder builder(disc, config.offline_config());
  OfflineDB db = builder.run(log);
  if (!config.db.empty()) save_offline(db, config.db);

  std::ostringstream os;
  int lo = std::numeric_limits<int>::max(), hi = 0, unconverged = 0;
  double sum = 0.0;
  for (const auto& s : db.spaces) {
    lo = std::min(lo, s.dimension());
    hi = std::max(hi, s.dimension());
    sum += s.dimension();
    if (!s.converged) ++unconverged;
  }
  if (!db.spaces.empty()) {
    os << "nodes=" << db.spaces.size() << " dim_min=" << lo << " dim_max=" << hi
       << " dim_mean=" << format_value(sum / db.spaces.size()) << " unconverged=" << unconverged
       << " t_total=" << format_value(db.timings.total_seconds)
       << " t_off_local_avg=" << format_value(db.timings.local_average());
    say(log, os.str());
  }
  return db;
}

ErrorReport cmd_online(const ExperimentConfig& config, const Log& log) {
  config.validate();
  const ProblemDefinition problem = config.make_problem();
  if (problem.nonlinear) throw std::invalid_argument("online command needs a linear problem; use richards");
  const Discretization disc = make_discretization(problem, config.n_coarse, config.fine_levels);
  const OfflineDB db = obtain_db(config, disc, log);
  double mu = online_parameter(config, problem);
  if (!problem.parameter_domain.contains(mu)) {
    say(log, "warning: parameter " + format_value(mu) + " outside D, clamped");
    mu = problem.parameter_domain.clamp(mu);
  }
  const Vector reference = fem_reference_solve(problem, mu, disc.hier);
  OnlineSolution solution;
  ErrorReport report;
  report.rows.push_back(online_row(config, disc, db, reference, mu, &solution));
  export_solution(config, solution, reference);
  return report;
}

ErrorReport cmd_richards(const ExperimentConfig& config, const Log& log) {
  config.validate();
  const ProblemDefinition problem = config.make_problem();
  if (!problem.nonlinear) throw std::invalid_argument("richards command needs the nonlinear problem");
  const Discretization disc = make_discretization(problem, config.n_coarse, config.fine_levels);
  const OfflineDB db = obtain_db(config, disc, log);
  const FineNewtonResult reference = fine_newton_reference(disc, 0.0, config.newton_tol, config.max_iter);
  say(log, "fine reference: " + std::to_string(reference.trace.size()) + " Newton steps");

  ErrorReport report;
  RichardsRun run = richards_row(config, disc, db, reference.solution, config.variant);
  int clamped = 0;
  for (const auto& s : run.result.trace) clamped = std::max(clamped, s.clamped);
  std::ostringstream trace;
  trace << to_string(config.variant) << " Newton trace:";
  for (const auto& s : run.result.trace) trace << ' ' << format_value(s.update_norm);
  trace << " (max clamped nodes " << clamped << ")";
  report.notes.push_back(trace.str());
  say(log, trace.str());
  report.rows.push_back(run.row);
  export_solution(config, run.result.solution, reference.solution);

  if (config.compare_variants) {
    const NewtonVariant other =
        config.variant == NewtonVariant::Full ? NewtonVariant::Precomputed : NewtonVariant::Full;
    try {
      const RichardsRun second = richards_row(config, disc, db, reference.solution, other);
      const Vector& a = run.result.solution.fine;
      const Vector& b = second.result.solution.fine;
      report.notes.push_back("variant difference (" + to_string(other) + " vs " + to_string(config.variant) +
                             "): " + format_value((a - b).norm() / a.norm()) + " after " +
                             std::to_string(second.result.trace.size()) + " steps");
    } catch (const Error& e) {
      report.notes.push_back(to_string(other) + " variant failed: " + e.what());
    }
    say(log, report.notes.back());
  }
  return report;
}

ErrorReport cmd_convergence(const ExperimentConfig& config, const Log& log) {
  config.validate();
  if (config.rows.size() < 2) throw std::invalid_argument("convergence study needs at least two rows");
  const int fine_n = config.fine_n > 0 ? config.fine_n : config.n_coarse << config.fine_levels;
  ErrorReport report;
  for (const auto& [n, k] : config.rows) {
    ExperimentConfig row_config = config;
    row_config.n_coarse = n;
    row_config.k = k;
    row_config.fine_levels = levels_for(n, fine_n);
    row_config.db.clear();
    row_config.out.clear();
    say(log, "row n=" + std::to_string(n) + " k=" + std::to_string(k));
    ErrorReport row = row_config.make_problem().nonlinear ? cmd_richards(row_config, log) : cmd_online(row_config, log);
    report.rows.push_back(row.rows.front());
    for (auto& note : row.notes) report.notes.push_back("n=" + std::to_string(n) + ": " + note);
  }
  report.eoc = compute_eoc(report.rows);
  return report;
}

void write_table(std::ostream& out, const ErrorReport& report, TableFormat format) {
  static const char* header[] = {"H", "k", "coarse_L2", "L2", "H1", "t_off_local_avg", "t_on_local_avg",
                                 "t_on_global_avg"};
  auto cells = [](const ErrorRow& r) {
    return std::vector<std::string>{format_value(r.H),         std::to_string(r.k),
                                    format_value(r.coarse_l2), format_value(r.l2),
                                    format_value(r.h1),        format_value(r.t_off_local_avg),
                                    format_value(r.t_on_local_avg), format_value(r.t_on_global_avg)};
  };
  auto eoc_text = [&](std::size_t i) {
    return i < report.eoc.size() && report.eoc[i] ? format_value(*report.eoc[i]) : std::string("undefined");
  };
  if (format == TableFormat::Csv) {
    for (int i = 0; i < 8; ++i) out << (i ? "," : "") << header[i];
    out << "\n";
    for (const auto& r : report.rows) {
      const auto c = cells(r);
      for (std::size_t i = 0; i < c.size(); ++i) out << (i ? "," : "") << c[i];
      out << "\n";
    }
    return;
  }
  out << "|";
  for (const char* h : header) out << " " << h << " |";
  out << "\n|";
  for (int i = 0; i < 8; ++i) out << "---|";
  out << "\n";
  for (const auto& r : report.rows) {
    out << "|";
    for (const auto& c : cells(r)) out << " " << c << " |";
    out << "\n";
  }
  if (!report.eoc.empty()) {
    out << "| EOC | | " << eoc_text(0) << " | " << eoc_text(1) << " | " << eoc_text(2) << " | | | |\n";
  }
}

void emit_tables(const ErrorReport& report, const fs::path& dir, const std::string& name) {
  fs::create_directories(dir);
  {
    std::ofstream csv(dir / (name + ".csv"));
    write_table(csv, report, TableFormat::Csv);
    if (!csv) throw Error("failed writing " + (dir / (name + ".csv")).string());
  }
  if (!report.eoc.empty()) {
    std::ofstream eoc(dir / (name + "_eoc.csv"));
    eoc << "coarse_L2,L2,H1\n";
    for (std::size_t i = 0; i < report.eoc.size(); ++i) {
      eoc << (i ? "," : "") << (report.eoc[i] ? format_value(*report.eoc[i]) : "undefined");
    }
    eoc << "\n";
  }
  std::ofstream md(dir / (name + ".md"));
  write_table(md, report, TableFormat::Markdown);
  for (const auto& note : report.notes) md << "\n" << note << "\n";
  if (!md) throw Error("failed writing " + (dir / (name + ".md")).string());
}

std::vector<ErrorRow> parse_csv_table(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("H,k,", 0) != 0) throw FormatError("missing table header");
  std::vector<ErrorRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> v;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      try {
        v.push_back(cell == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(cell));
      } catch (const std::logic_error&) {
        throw FormatError("bad table cell '" + cell + "'");
      }
    }
    if (v.size() != 8) throw FormatError("table row needs 8 cells");
    ErrorRow r;
    r.H = v[0];
    r.k = static_cast<int>(v[1]);
    r.coarse_l2 = v[2];
    r.l2 = v[3];
    r.h1 = v[4];
    r.t_off_local_avg = v[5];
    r.t_on_local_avg = v[6];
    r.t_on_global_avg = v[7];
    rows.push_back(r);
  }
  return rows;
}

}  // namespace rblod
