#include "rblod/errors.hpp"
#include "rblod/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <sstream>

namespace {

struct Flags {
  std::string problem = "mp1";
  std::optional<int> coarse_n, fine_levels, k, train_size, j_max, threads, max_iter, fine_n;
  std::optional<double> tol, mu, mu1, newton_tol, p0;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> alpha_mode, variant, db, out;
  bool compare_variants = false;
  std::optional<std::string> epsilon, mu_lower, mu_upper, soil1, soil2, soil3, soil4;
  std::vector<std::string> rows;
  std::vector<int> coarse_list;
  std::string coupling = "none";
  std::string name;
};

template <class T>
void take(T& target, const std::optional<T>& value) {
  if (value) target = *value;
}

rblod::ExperimentConfig build_config(const Flags& f) {
  rblod::ExperimentConfig c = rblod::default_config(f.problem);
  take(c.n_coarse, f.coarse_n);
  take(c.fine_levels, f.fine_levels);
  take(c.k, f.k);
  take(c.train_size, f.train_size);
  take(c.j_max, f.j_max);
  take(c.threads, f.threads);
  take(c.max_iter, f.max_iter);
  take(c.fine_n, f.fine_n);
  take(c.tol, f.tol);
  take(c.newton_tol, f.newton_tol);
  take(c.seed, f.seed);
  c.mu = f.mu;
  c.mu1 = f.mu1;
  c.p0 = f.p0;
  if (f.alpha_mode) c.alpha_mode = rblod::parse_alpha_mode(*f.alpha_mode);
  if (f.variant) c.variant = rblod::parse_newton_variant(*f.variant);
  if (f.db) c.db = *f.db;
  if (f.out) c.out = *f.out;
  c.compare_variants = f.compare_variants;
  const std::pair<const char*, const std::optional<std::string>*> overrides[] = {
      {"epsilon", &f.epsilon}, {"mu_lower", &f.mu_lower}, {"mu_upper", &f.mu_upper}, {"soil1", &f.soil1},
      {"soil2", &f.soil2},     {"soil3", &f.soil3},       {"soil4", &f.soil4}};
  for (const auto& [key, value] : overrides) {
    if (*value) c.overrides[key] = **value;
  }

  for (const auto& row : f.rows) {
    const auto colon = row.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("rows take the form n:k, got '" + row + "'");
    c.rows.emplace_back(std::stoi(row.substr(0, colon)), std::stoi(row.substr(colon + 1)));
  }
  if (!f.coarse_list.empty()) {
    double shift = 0.0;
    if (f.coupling == "mp1") {
      shift = 1.0;
    } else if (f.coupling == "mp2") {
      shift = 0.5;
    } else if (f.coupling != "none") {
      shift = std::stod(f.coupling);
    }
    const double side = c.make_problem().side;
    for (int n : f.coarse_list) {
      c.rows.emplace_back(n, f.coupling == "none" ? c.k : rblod::coupled_k(side / n, shift));
    }
  }
  return c;
}

void add_common(CLI::App& app, Flags& f) {
  app.add_option("--problem", f.problem, "model problem: mp1 or mp2")->check(CLI::IsMember({"mp1", "mp2"}));
  app.add_option("--coarse-n", f.coarse_n, "coarse cells per side");
  app.add_option("--fine-levels", f.fine_levels, "uniform refinements from coarse to fine");
  app.add_option("--k", f.k, "patch order");
  app.add_option("--tol", f.tol, "relative greedy tolerance");
  app.add_option("--seed", f.seed, "training set seed");
  app.add_option("--train-size", f.train_size, "training set size");
  app.add_option("--j-max", f.j_max, "maximum local RB dimension");
  app.add_option("--mu", f.mu, "online parameter");
  app.add_option("--mu1", f.mu1, "first greedy parameter (default: first training sample)");
  app.add_option("--alpha-mode", f.alpha_mode, "estimator coercivity constant: local, parameter or global");
  app.add_option("--db", f.db, "offline database directory");
  app.add_option("--out", f.out, "output directory");
  app.add_option("--variant", f.variant, "Newton variant: full or precomputed");
  app.add_flag("--compare-variants", f.compare_variants, "also run the other Newton variant");
  app.add_option("--threads", f.threads, "worker threads");
  app.add_option("--newton-tol", f.newton_tol, "relative Newton tolerance");
  app.add_option("--max-iter", f.max_iter, "maximum Newton iterations");
  app.add_option("--p0", f.p0, "initial Newton value (default: midpoint of D)");
  app.add_option("--epsilon", f.epsilon, "oscillation scale");
  app.add_option("--mu-lower", f.mu_lower, "lower end of D");
  app.add_option("--mu-upper", f.mu_upper, "upper end of D");
  app.add_option("--soil1", f.soil1, "theta_min,theta_max,lambda,p_b");
  app.add_option("--soil2", f.soil2, "theta_min,theta_max,lambda,p_b");
  app.add_option("--soil3", f.soil3, "theta_min,theta_max,lambda,p_b");
  app.add_option("--soil4", f.soil4, "theta_min,theta_max,lambda,p_b");
  app.add_option("--name", f.name, "table file name (default: subcommand name)");
}

void print_report(const rblod::ErrorReport& report) {
  rblod::write_table(std::cout, report, rblod::TableFormat::Markdown);
  for (const auto& note : report.notes) std::cout << note << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RB-LOD multiscale solver"};
  app.set_config("--config", "", "key=value configuration file; flags override it");
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  add_common(app, f);

  auto* offline = app.add_subcommand("offline", "run the offline phase and store the database");
  auto* online = app.add_subcommand("online", "online solve and errors against the fine reference");
  auto* convergence = app.add_subcommand("convergence", "error table over several (H, k) rows");
  convergence->add_option("--rows", f.rows, "rows as n:k")->delimiter(',');
  convergence->add_option("--coarse-list", f.coarse_list, "coarse resolutions for coupled rows")->delimiter(',');
  convergence->add_option("--coupling", f.coupling, "k(H) rule: none, mp1 (ln H + 1), mp2 (ln H + 0.5) or a shift");
  convergence->add_option("--fine-n", f.fine_n, "fine cells per side for all rows");
  auto* richards = app.add_subcommand("richards", "Newton solve of the Richards problem");

  CLI11_PARSE(app, argc, argv);

  const rblod::Log log = [](const std::string& line) { std::cerr << line << "\n"; };
  try {
    const rblod::ExperimentConfig config = build_config(f);
    rblod::ErrorReport report;
    std::string name = f.name;
    if (offline->parsed()) {
      if (config.db.empty()) throw std::invalid_argument("offline needs --db");
      rblod::cmd_offline(config, log);
      return 0;
    }
    if (online->parsed()) {
      report = rblod::cmd_online(config, log);
      if (name.empty()) name = "online";
    } else if (convergence->parsed()) {
      report = rblod::cmd_convergence(config, log);
      if (name.empty()) name = "convergence";
    } else if (richards->parsed()) {
      report = rblod::cmd_richards(config, log);
      if (name.empty()) name = "richards";
    }
    print_report(report);
    if (!config.out.empty()) rblod::emit_tables(report, config.out, name);
  } catch (const rblod::NonConvergenceError& e) {
    std::cerr << "error: " << e.what() << "\ntrace:";
    for (double v : e.trace()) std::cerr << ' ' << v;
    std::cerr << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
