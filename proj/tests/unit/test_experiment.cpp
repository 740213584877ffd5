#include "rblod/errors.hpp"
#include "rblod/experiment.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace rblod;

namespace {

ErrorRow row(double h, double coarse, double l2, double h1) {
  ErrorRow r;
  r.H = h;
  r.k = 2;
  r.coarse_l2 = coarse;
  r.l2 = l2;
  r.h1 = h1;
  r.t_off_local_avg = 0.5;
  r.t_on_local_avg = 1e-5;
  r.t_on_global_avg = 2e-3;
  return r;
}

}  // namespace

TEST_CASE("EOC of exact powers") {
  const std::vector<ErrorRow> rows = {row(0.25, 0.16, 0.0625, 0.5), row(0.125, 0.04, 0.015625, 0.25),
                                      row(0.0625, 0.01, 0.00390625, 0.125)};
  const auto eoc = compute_eoc(rows);
  REQUIRE(eoc.size() == 3);
  CHECK(*eoc[0] == doctest::Approx(2.0));
  CHECK(*eoc[1] == doctest::Approx(2.0));
  CHECK(*eoc[2] == doctest::Approx(1.0));
}

TEST_CASE("EOC averages successive pairs") {
  const std::vector<ErrorRow> rows = {row(0.5, 1.0, 1.0, 1.0), row(0.25, 0.5, 0.5, 0.5), row(0.125, 0.0625, 0.125, 0.5)};
  const auto eoc = compute_eoc(rows);
  CHECK(*eoc[0] == doctest::Approx(2.0));
  CHECK(*eoc[1] == doctest::Approx(1.5));
  CHECK(*eoc[2] == doctest::Approx(0.5));
}

TEST_CASE("EOC edge cases") {
  CHECK(compute_eoc({}).empty());
  CHECK(compute_eoc({row(0.5, 1, 1, 1)}).empty());
  const auto eoc = compute_eoc({row(0.5, 0.0, 1, 1), row(0.25, 0.1, 0.5, 0.5)});
  CHECK_FALSE(eoc[0].has_value());
  CHECK(eoc[1].has_value());
}

TEST_CASE("CSV tables round trip") {
  ErrorReport report;
  report.rows = {row(0.25, 0.11331, 0.04106, 0.14681), row(0.125, 0.02878, 0.01076, 0.09263)};
  report.rows[1].t_off_local_avg = std::nan("");
  std::ostringstream out;
  write_table(out, report, TableFormat::Csv);
  CHECK(out.str().rfind("H,k,coarse_L2,L2,H1,t_off_local_avg,t_on_local_avg,t_on_global_avg\n", 0) == 0);
  const auto parsed = parse_csv_table(out.str());
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[0].H == 0.25);
  CHECK(parsed[0].k == 2);
  CHECK(parsed[0].coarse_l2 == doctest::Approx(0.11331));
  CHECK(parsed[1].h1 == doctest::Approx(0.09263));
  CHECK(std::isnan(parsed[1].t_off_local_avg));

  std::ostringstream empty;
  write_table(empty, ErrorReport{}, TableFormat::Csv);
  CHECK(parse_csv_table(empty.str()).empty());
  CHECK_THROWS_AS(parse_csv_table("x,y\n"), FormatError);
  CHECK_THROWS_AS(parse_csv_table(empty.str() + "1,2,3\n"), FormatError);
  CHECK_THROWS_AS(parse_csv_table(empty.str() + "1,2,3,4,5,6,7,abc\n"), FormatError);
}

TEST_CASE("markdown tables") {
  ErrorReport report;
  report.rows = {row(0.25, 0.2, 0.1, 0.3), row(0.125, 0.0, 0.05, 0.15)};
  report.eoc = compute_eoc(report.rows);
  std::ostringstream out;
  write_table(out, report, TableFormat::Markdown);
  const std::string text = out.str();
  CHECK(text.find("| H | k | coarse_L2 |") == 0);
  CHECK(text.find("| 0.25 | 2 | 0.2 | 0.1 | 0.3 |") != std::string::npos);
  CHECK(text.find("| EOC | | undefined | 1 | 1 |") != std::string::npos);
}

TEST_CASE("coupled patch order and level arithmetic") {
  CHECK(coupled_k(0.25, 1.0) == 2);
  CHECK(coupled_k(0.125, 1.0) == 3);
  CHECK(coupled_k(0.0625, 1.0) == 3);
  CHECK(coupled_k(0.25, 0.5) == 1);
  CHECK(coupled_k(0.125, 0.5) == 2);
  CHECK(coupled_k(0.0625, 0.5) == 3);
  CHECK_THROWS_AS(coupled_k(0.0, 1.0), std::invalid_argument);
  CHECK(levels_for(8, 128) == 4);
  CHECK(levels_for(16, 16) == 0);
  CHECK_THROWS_AS(levels_for(8, 96), std::invalid_argument);
  CHECK_THROWS_AS(levels_for(16, 8), std::invalid_argument);
}

TEST_CASE("configuration defaults and validation") {
  const ExperimentConfig mp1 = default_config("mp1");
  CHECK((mp1.n_coarse << mp1.fine_levels) == 128);
  CHECK(mp1.tol == 0.1);
  CHECK(mp1.train_size == 100);
  const ExperimentConfig mp2 = default_config("mp2");
  CHECK((mp2.n_coarse << mp2.fine_levels) == 64);
  CHECK(mp2.tol == 0.01);
  CHECK_NOTHROW(mp1.validate());
  ExperimentConfig bad = mp1;
  bad.tol = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = mp1;
  bad.problem = "mp9";
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = mp1;
  bad.threads = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  ExperimentConfig over = mp1;
  over.overrides["epsilon"] = "0.2";
  CHECK(over.make_problem().epsilon == 0.2);
  const OfflineConfig oc = mp1.offline_config();
  CHECK(oc.levels == 4);
  CHECK(oc.alpha_mode == AlphaMode::Local);
}

TEST_CASE("small online run and convergence table") {
  ExperimentConfig c = default_config("mp1");
  c.n_coarse = 2;
  c.fine_levels = 2;
  c.k = 1;
  c.train_size = 10;
  const ErrorReport online = cmd_online(c);
  REQUIRE(online.rows.size() == 1);
  CHECK(online.rows[0].H == 0.5);
  CHECK(online.rows[0].h1 > 0.0);
  CHECK(online.rows[0].h1 < 1.0);

  c.rows = {{2, 1}, {4, 1}};
  c.fine_n = 8;
  const ErrorReport conv = cmd_convergence(c);
  CHECK(conv.rows.size() == 2);
  CHECK(conv.eoc.size() == 3);
  c.rows = {{2, 1}};
  CHECK_THROWS_AS(cmd_convergence(c), std::invalid_argument);
}
